//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation in creation order, so parents always
//! precede children and a single reverse sweep computes all gradients.
//! Nodes are referred to by [`Var`] handles which are only meaningful for
//! the tape that created them.
//!
//! Elementwise binary ops broadcast a `1 x c` row vector, an `r x 1` column
//! vector or a `1 x 1` scalar against a full matrix. Nothing else broadcasts.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, symmetrize, Factor, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SumMode {
    /// Sum of every entry, `1 x 1`.
    All,
    /// Sum down each column, `1 x c`.
    Columns,
    /// Sum across each row, `r x 1`.
    Rows,
}

/// Primitive operations. Anything else is composed from these.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    MatMul,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Sum(SumMode),
    Scale(f64),
    ConcatRows,
    Slice {
        rows: Range<usize>,
        cols: Range<usize>,
    },
    Transpose,
    /// `solve(A, B) = sym(A)^-1 B` through a jittered Cholesky factor.
    SpdSolve,
    /// `log det sym(A)` through a jittered Cholesky factor.
    SpdLogDet,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "elementwise_mul",
            Op::MatMul => "matmul",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sum(_) => "sum",
            Op::Scale(_) => "scale",
            Op::ConcatRows => "concat_rows",
            Op::Slice { .. } => "slice",
            Op::Transpose => "transpose",
            Op::SpdSolve => "spd_solve",
            Op::SpdLogDet => "spd_logdet",
        }
    }
}

struct Node {
    value: Matrix,
    op: Option<Op>,
    parents: Vec<usize>,
    requires_grad: bool,
    factor: Option<Factor>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node. Outstanding [`Var`]s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("leaf".into()));
        }
        Ok(self.push(value, None, Vec::new(), requires_grad, None))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var> {
        self.constant(Matrix::from_element(1, 1, value))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Parent indices of a node; always smaller than the node's own index.
    pub fn parents(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].parents
    }

    /// Accumulated gradient, zeros if no backward pass reached this node.
    pub fn grad(&self, v: Var) -> Matrix {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let val = &self.nodes[v.0].value;
                Matrix::zeros(val.nrows(), val.ncols())
            }
        }
    }

    pub fn zero_gradients(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push(
        &mut self,
        value: Matrix,
        op: Option<Op>,
        parents: Vec<usize>,
        requires_grad: bool,
        factor: Option<Factor>,
    ) -> Var {
        self.nodes.push(Node { value, op, parents, requires_grad, factor });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Records `op` applied to `inputs`.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        let arity = match op {
            Op::Add | Op::Sub | Op::Mul | Op::MatMul | Op::SpdSolve => 2,
            Op::ConcatRows => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity || inputs.iter().any(|v| v.0 >= self.nodes.len()) {
            return Err(Error::Dimension {
                op: op.name(),
                detail: format!("expected {arity} valid inputs, got {}", inputs.len()),
            });
        }
        let mut factor = None;
        let value = match &op {
            Op::Add | Op::Sub | Op::Mul => {
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                let (r, c) = broadcast_shape(op.name(), a.shape(), b.shape())?;
                let f = match op {
                    Op::Add => |x: f64, y: f64| x + y,
                    Op::Sub => |x: f64, y: f64| x - y,
                    _ => |x: f64, y: f64| x * y,
                };
                if a.shape() == b.shape() {
                    a.zip_map(b, f)
                } else {
                    broadcast_zip(a, b, r, c, f)
                }
            }
            Op::MatMul => {
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.ncols() != b.nrows() {
                    return Err(mismatch(op.name(), a.shape(), b.shape()));
                }
                a * b
            }
            Op::Tanh => self.value(inputs[0]).map(f64::tanh),
            Op::Sigmoid => self.value(inputs[0]).map(sigmoid),
            Op::Exp => self.value(inputs[0]).map(f64::exp),
            Op::Log => self.value(inputs[0]).map(f64::ln),
            Op::Sum(mode) => {
                let a = self.value(inputs[0]);
                match mode {
                    SumMode::All => Matrix::from_element(1, 1, a.sum()),
                    SumMode::Columns => Matrix::from_iterator(1, a.ncols(), a.column_iter().map(|c| c.sum())),
                    SumMode::Rows => row_sums(a),
                }
            }
            Op::Scale(s) => self.value(inputs[0]) * *s,
            Op::ConcatRows => {
                let cols = self.shape(inputs[0]).1;
                let mut rows = 0;
                for &v in inputs {
                    let (r, c) = self.shape(v);
                    if c != cols {
                        return Err(mismatch(op.name(), self.shape(inputs[0]), (r, c)));
                    }
                    rows += r;
                }
                let mut out = Matrix::zeros(rows, cols);
                let mut at = 0;
                for &v in inputs {
                    let m = self.value(v);
                    out.view_mut((at, 0), m.shape()).copy_from(m);
                    at += m.nrows();
                }
                out
            }
            Op::Slice { rows, cols } => {
                let a = self.value(inputs[0]);
                if rows.start >= rows.end || cols.start >= cols.end || rows.end > a.nrows() || cols.end > a.ncols() {
                    return Err(Error::Dimension {
                        op: op.name(),
                        detail: format!("range [{:?}, {:?}] outside {}x{}", rows, cols, a.nrows(), a.ncols()),
                    });
                }
                let mut out = Matrix::zeros(rows.len(), cols.len());
                let src = a.as_slice();
                for (j, col) in out.as_mut_slice().chunks_mut(rows.len()).enumerate() {
                    let from = (cols.start + j) * a.nrows() + rows.start;
                    col.copy_from_slice(&src[from..from + rows.len()]);
                }
                out
            }
            Op::Transpose => self.value(inputs[0]).transpose(),
            Op::SpdSolve => {
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.nrows() != a.ncols() || a.ncols() != b.nrows() {
                    return Err(mismatch(op.name(), a.shape(), b.shape()));
                }
                let f = cholesky_jittered(a)?;
                let x = f.solve(b);
                factor = Some(f);
                x
            }
            Op::SpdLogDet => {
                let a = self.value(inputs[0]);
                let f = cholesky_jittered(a)?;
                let ld = f.log_det();
                factor = Some(f);
                Matrix::from_element(1, 1, ld)
            }
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let parents = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(value, Some(op), parents, requires_grad, factor))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Tanh, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sigmoid, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Log, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sum(SumMode::All), &[a])
    }
    pub fn sum_columns(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sum(SumMode::Columns), &[a])
    }
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sum(SumMode::Rows), &[a])
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Op::Scale(s), &[a])
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Op::ConcatRows, parts)
    }
    pub fn slice(&mut self, a: Var, rows: Range<usize>, cols: Range<usize>) -> Result<Var> {
        self.apply(Op::Slice { rows, cols }, &[a])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Transpose, &[a])
    }
    pub fn spd_solve(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::SpdSolve, &[a, b])
    }
    pub fn spd_logdet(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::SpdLogDet, &[a])
    }

    // Composites.

    /// `sqrt(x) = exp(log(x) / 2)`; `x` must be positive.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let l = self.log(a)?;
        let h = self.scale(l, 0.5)?;
        self.exp(h)
    }

    /// `x + c` for a constant `c`.
    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = self.scalar(c)?;
        self.add(a, k)
    }

    /// Sum of squares, `1 x 1`.
    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let sq = self.mul(a, a)?;
        self.sum(sq)
    }

    /// Reverse sweep from a `1 x 1` root. Gradients add onto whatever is
    /// already accumulated; call [`Tape::zero_gradients`] between passes.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let (rows, cols) = self.shape(root);
        if rows != 1 || cols != 1 {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut pass: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        pass[root.0] = Some(Matrix::from_element(1, 1, 1.0));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = pass[idx].take() else {
                continue;
            };
            if let Some(Op::Slice { rows, cols }) = &self.nodes[idx].op {
                // Route straight into the parent's block instead of a padded copy.
                let p = self.nodes[idx].parents[0];
                if self.nodes[p].requires_grad {
                    let slot = pass[p].get_or_insert_with(|| {
                        let (r, c) = self.nodes[p].value.shape();
                        Matrix::zeros(r, c)
                    });
                    let mut block = slot.view_mut((rows.start, cols.start), g.shape());
                    block += &g;
                }
            } else if self.nodes[idx].op.is_some() {
                for (p, pg) in self.local_grads(idx, &g) {
                    if self.nodes[p].requires_grad {
                        accumulate(&mut pass[p], pg);
                    }
                }
            }
            accumulate(&mut self.grads[idx], g);
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, g: &Matrix) -> Vec<(usize, Matrix)> {
        let node = &self.nodes[idx];
        let ps = &node.parents;
        let val = |i: usize| &self.nodes[ps[i]].value;
        let want = |i: usize| self.nodes[ps[i]].requires_grad;
        let op = node.op.as_ref().expect("interior node");
        match op {
            Op::Add | Op::Sub => {
                let mut out = Vec::with_capacity(2);
                if want(0) {
                    let (r, c) = val(0).shape();
                    out.push((ps[0], reduce_to(g, r, c)));
                }
                if want(1) {
                    let (r, c) = val(1).shape();
                    let gb = reduce_to(g, r, c);
                    out.push((ps[1], if matches!(op, Op::Sub) { -gb } else { gb }));
                }
                out
            }
            Op::Mul => {
                let (rr, cc) = g.shape();
                let times = |other: &Matrix| {
                    if other.shape() == (rr, cc) {
                        g.component_mul(other)
                    } else {
                        g.component_mul(&broadcast_to(other, rr, cc))
                    }
                };
                let mut out = Vec::with_capacity(2);
                if want(0) {
                    let (r, c) = val(0).shape();
                    out.push((ps[0], reduce_to(&times(val(1)), r, c)));
                }
                if want(1) {
                    let (r, c) = val(1).shape();
                    out.push((ps[1], reduce_to(&times(val(0)), r, c)));
                }
                out
            }
            Op::MatMul => {
                let mut out = Vec::with_capacity(2);
                if want(0) {
                    out.push((ps[0], g * val(1).transpose()));
                }
                if want(1) {
                    out.push((ps[1], val(0).transpose() * g));
                }
                out
            }
            Op::Tanh => {
                let y = &node.value;
                vec![(ps[0], g.zip_map(y, |gi, yi| gi * (1.0 - yi * yi)))]
            }
            Op::Sigmoid => {
                let y = &node.value;
                vec![(ps[0], g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi)))]
            }
            Op::Exp => vec![(ps[0], g.component_mul(&node.value))],
            Op::Log => vec![(ps[0], g.zip_map(val(0), |gi, xi| gi / xi))],
            Op::Sum(_) => {
                let (r, c) = val(0).shape();
                vec![(ps[0], broadcast_to(g, r, c))]
            }
            Op::Scale(s) => vec![(ps[0], g * *s)],
            Op::ConcatRows => {
                let mut at = 0;
                ps.iter()
                    .map(|&p| {
                        let (r, c) = self.nodes[p].value.shape();
                        let part = g.view((at, 0), (r, c)).into_owned();
                        at += r;
                        (p, part)
                    })
                    .collect()
            }
            Op::Slice { rows, cols } => {
                let (r, c) = val(0).shape();
                let mut full = Matrix::zeros(r, c);
                full.view_mut((rows.start, cols.start), g.shape()).copy_from(g);
                vec![(ps[0], full)]
            }
            Op::Transpose => vec![(ps[0], g.transpose())],
            Op::SpdSolve => {
                let f = node.factor.as_ref().expect("factor cached at forward");
                let gb = f.solve(g);
                let mut out = Vec::with_capacity(2);
                if want(0) {
                    let ga = -(&gb * node.value.transpose());
                    out.push((ps[0], symmetrize(&ga)));
                }
                if want(1) {
                    out.push((ps[1], gb));
                }
                out
            }
            Op::SpdLogDet => {
                let f = node.factor.as_ref().expect("factor cached at forward");
                vec![(ps[0], f.inverse() * g[(0, 0)])]
            }
        }
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => *acc += g,
        None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Dimension { op, detail: format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1) }
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(mismatch(op, a, b)),
    }
}

fn at_broadcast(m: &Matrix, i: usize, j: usize) -> f64 {
    m[(if m.nrows() == 1 { 0 } else { i }, if m.ncols() == 1 { 0 } else { j })]
}

fn broadcast_zip(a: &Matrix, b: &Matrix, rows: usize, cols: usize, f: fn(f64, f64) -> f64) -> Matrix {
    let mut out = Matrix::zeros(rows, cols);
    fn column(m: &Matrix, j: usize) -> &[f64] {
        let j = if m.ncols() == 1 { 0 } else { j };
        &m.as_slice()[j * m.nrows()..(j + 1) * m.nrows()]
    }
    for (j, o) in out.as_mut_slice().chunks_mut(rows).enumerate() {
        let (ca, cb) = (column(a, j), column(b, j));
        for (i, v) in o.iter_mut().enumerate() {
            let x = if ca.len() == 1 { ca[0] } else { ca[i] };
            let y = if cb.len() == 1 { cb[0] } else { cb[i] };
            *v = f(x, y);
        }
    }
    out
}

fn broadcast_to(m: &Matrix, rows: usize, cols: usize) -> Matrix {
    if m.shape() == (rows, cols) {
        return m.clone();
    }
    Matrix::from_fn(rows, cols, |i, j| at_broadcast(m, i, j))
}

fn row_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), 1);
    for c in m.column_iter() {
        out += c;
    }
    out
}

fn reduce_to(g: &Matrix, rows: usize, cols: usize) -> Matrix {
    let mut out = if rows == 1 && g.nrows() != 1 {
        Matrix::from_iterator(1, g.ncols(), g.column_iter().map(|c| c.sum()))
    } else {
        g.clone()
    };
    if cols == 1 && out.ncols() != 1 {
        out = row_sums(&out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn leaf_starts_with_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(m(1, 1, &[3.0]), true).unwrap();
        assert_eq!(t.value(x)[(0, 0)], 3.0);
        assert_eq!(t.grad(x)[(0, 0)], 0.0);
        assert!(t.parents(x).is_empty());
    }

    #[test]
    fn non_grad_leaf_is_excluded() {
        let mut t = Tape::new();
        let x = t.leaf(m(2, 2, &[1.0, 2.0, 3.0, 4.0]), false).unwrap();
        let s = t.sum(x).unwrap();
        t.backward(s).unwrap();
        assert!(!t.requires_grad(x));
        assert_eq!(t.grad(x), Matrix::zeros(2, 2));
    }

    #[test]
    fn nan_leaf_is_rejected() {
        let mut t = Tape::new();
        assert!(matches!(t.leaf(m(1, 1, &[f64::NAN]), true), Err(Error::NonFinite(_))));
    }

    #[test]
    fn matmul_shape_rule() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3)).unwrap();
        let b = t.constant(Matrix::zeros(3, 2)).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape(), (2, 2));
        let err = t.matmul(a, a).unwrap_err();
        assert!(err.to_string().contains("matmul"));
        assert!(err.to_string().contains("2x3"));
    }

    #[test]
    fn tanh_of_zero_and_exp_of_one() {
        let mut t = Tape::new();
        let z = t.leaf(m(1, 1, &[0.0]), true).unwrap();
        let y = t.tanh(z).unwrap();
        assert_eq!(t.scalar_value(y), 0.0);

        let x = t.leaf(m(1, 1, &[1.0]), true).unwrap();
        let e = t.exp(x).unwrap();
        assert_eq!(t.scalar_value(e), std::f64::consts::E);
        t.backward(e).unwrap();
        assert!((t.grad(x)[(0, 0)] - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(m(1, 1, &[3.0]), true).unwrap();
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x)[(0, 0)], 6.0);
    }

    #[test]
    fn non_scalar_root_is_an_error() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(2, 2), true).unwrap();
        let y = t.tanh(x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::NonScalarRoot { rows: 2, cols: 2 })));
    }

    #[test]
    fn fan_out_accumulates_and_zeroing_resets() {
        let mut t = Tape::new();
        let x = t.leaf(m(1, 1, &[2.0]), true).unwrap();
        let a = t.scale(x, 3.0).unwrap();
        let b = t.add(a, x).unwrap();
        t.backward(b).unwrap();
        assert_eq!(t.grad(x)[(0, 0)], 4.0);
        t.backward(b).unwrap();
        assert_eq!(t.grad(x)[(0, 0)], 8.0);
        t.zero_gradients();
        t.backward(b).unwrap();
        assert_eq!(t.grad(x)[(0, 0)], 4.0);
    }

    #[test]
    fn broadcasting_row_and_column_vectors() {
        let mut t = Tape::new();
        let a = t.leaf(m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true).unwrap();
        let row = t.leaf(m(1, 3, &[1.0, 1.0, 1.0]), true).unwrap();
        let col = t.leaf(m(2, 1, &[10.0, 20.0]), true).unwrap();
        let s = t.add(a, row).unwrap();
        let p = t.mul(s, col).unwrap();
        assert_eq!(t.value(p)[(1, 2)], 140.0);
        let tot = t.sum(p).unwrap();
        t.backward(tot).unwrap();
        assert_eq!(t.grad(row), m(1, 3, &[30.0, 30.0, 30.0]));
        assert_eq!(t.grad(col), m(2, 1, &[9.0, 18.0]));
        let bad = t.constant(Matrix::zeros(3, 3)).unwrap();
        assert!(t.add(a, bad).is_err());
    }

    #[test]
    fn slice_and_concat_round_trip() {
        let mut t = Tape::new();
        let a = t.leaf(m(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]), true).unwrap();
        let top = t.slice(a, 0..2, 0..2).unwrap();
        let bottom = t.slice(a, 2..4, 0..2).unwrap();
        let back = t.concat_rows(&[bottom, top]).unwrap();
        assert_eq!(t.value(back)[(0, 0)], 5.0);
        assert!(t.slice(a, 3..5, 0..1).is_err());
    }

    #[test]
    fn spd_solve_and_logdet_values() {
        let mut t = Tape::new();
        let a = t.constant(m(2, 2, &[4.0, 1.0, 1.0, 3.0])).unwrap();
        let b = t.constant(m(2, 1, &[1.0, 2.0])).unwrap();
        let x = t.spd_solve(a, b).unwrap();
        let x = t.value(x).clone();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-9);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-9);
        let ld = t.spd_logdet(a).unwrap();
        assert!((t.scalar_value(ld) - 11f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn parents_precede_children() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_element(2, 2, 0.5), true).unwrap();
        let y = t.tanh(x).unwrap();
        let z = t.matmul(y, x).unwrap();
        let s = t.sum(z).unwrap();
        for v in [y, z, s] {
            assert!(t.parents(v).iter().all(|&p| p < v.index()));
        }
    }
}
