//! Squared-exponential (RBF) kernel with per-dimension lengthscales.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `k(a, b) = s² exp(-½ Σ_d ((a_d - b_d) / ℓ_d)²)`, stored in log space so
/// every value is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfKernel {
    pub log_signal_variance: f64,
    pub log_lengthscales: Vec<f64>,
}

impl RbfKernel {
    pub fn new(signal_variance: f64, lengthscales: &[f64]) -> Result<Self> {
        if !(signal_variance > 0.0) || lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::invalid("kernel variance and lengthscales must be positive"));
        }
        if lengthscales.is_empty() {
            return Err(Error::invalid("kernel needs at least one lengthscale"));
        }
        Ok(Self {
            log_signal_variance: signal_variance.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
        })
    }

    pub fn dims(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != self.dims() || b.len() != self.dims() {
            return Err(Error::Dimension {
                op: "rbf_eval",
                detail: format!("kernel has {} dims, inputs {} and {}", self.dims(), a.len(), b.len()),
            });
        }
        Ok(self.eval_unchecked(a.iter().copied(), b.iter().copied()))
    }

    fn eval_unchecked(&self, a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
        let d2: f64 = a.zip(b).zip(&self.log_lengthscales).map(|((x, y), ll)| ((x - y) / ll.exp()).powi(2)).sum();
        self.signal_variance() * (-0.5 * d2).exp()
    }

    /// `K[i, j] = k(x_i, z_j)` for row-wise inputs.
    pub fn gram(&self, x: &Matrix, z: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.dims() || z.ncols() != self.dims() {
            return Err(Error::Dimension {
                op: "rbf_gram",
                detail: format!("kernel has {} dims, inputs {} and {}", self.dims(), x.ncols(), z.ncols()),
            });
        }
        Ok(Matrix::from_fn(x.nrows(), z.nrows(), |i, j| {
            self.eval_unchecked(x.row(i).iter().copied(), z.row(j).iter().copied())
        }))
    }
}

pub fn rbf_eval(kernel: &RbfKernel, a: &[f64], b: &[f64]) -> Result<f64> {
    kernel.eval(a, b)
}

/// Gram matrix on the tape. `log_sv` is `1 x 1`, `log_ls` is `1 x d`, and
/// `x`, `z` hold one input per row.
pub fn rbf_gram_tape(tape: &mut Tape, log_sv: Var, log_ls: Var, x: Var, z: Var) -> Result<Var> {
    let neg = tape.scale(log_ls, -1.0)?;
    let inv_ls = tape.exp(neg)?;
    let xs = tape.mul(x, inv_ls)?;
    let zs = tape.mul(z, inv_ls)?;
    let xsq = tape.mul(xs, xs)?;
    let xn = tape.sum_rows(xsq)?;
    let zsq = tape.mul(zs, zs)?;
    let zn = tape.sum_rows(zsq)?;
    let zn = tape.transpose(zn)?;
    let zt = tape.transpose(zs)?;
    let cross = tape.matmul(xs, zt)?;
    let cross = tape.scale(cross, -2.0)?;
    let d2 = tape.add(cross, xn)?;
    let d2 = tape.add(d2, zn)?;
    let e = tape.scale(d2, -0.5)?;
    let e = tape.exp(e)?;
    let sv = tape.exp(log_sv)?;
    tape.mul(e, sv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_distance_gives_signal_variance() {
        let k = RbfKernel::new(2.5, &[0.3, 4.0]).unwrap();
        assert!((k.eval(&[1.0, -2.0], &[1.0, -2.0]).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn unit_kernel_at_sqrt_two() {
        let k = RbfKernel::new(1.0, &[1.0]).unwrap();
        let v = k.eval(&[0.0], &[2f64.sqrt()]).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-12);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch() {
        let k = RbfKernel::new(1.0, &[1.0, 1.0]).unwrap();
        assert!(k.eval(&[0.0], &[0.0, 1.0]).is_err());
        assert!(RbfKernel::new(-1.0, &[1.0]).is_err());
    }

    #[test]
    fn tape_gram_matches_direct() {
        let k = RbfKernel::new(1.7, &[0.4, 2.0]).unwrap();
        let x = Matrix::from_row_slice(3, 2, &[0.1, 0.2, -1.0, 0.5, 2.0, -0.3]);
        let z = Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let mut t = Tape::new();
        let sv = t.scalar(k.log_signal_variance).unwrap();
        let ls = t.constant(Matrix::from_row_slice(1, 2, &k.log_lengthscales)).unwrap();
        let xv = t.constant(x.clone()).unwrap();
        let zv = t.constant(z.clone()).unwrap();
        let g = rbf_gram_tape(&mut t, sv, ls, xv, zv).unwrap();
        let direct = k.gram(&x, &z).unwrap();
        assert!((t.value(g) - direct).abs().max() < 1e-12);
    }
}
