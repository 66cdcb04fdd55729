//! Two-layer LSTM that maps each `20 x 3` cycle profile to a 2-d feature.
//!
//! Every cycle is its own 20-step sequence. Cycles are batched as columns,
//! which is the same computation as running them one by one. The feature is
//! a linear projection of the last layer-2 hidden state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::TensorFile;
use crate::data::{CycleProfile, CHANNELS, PROFILE_STEPS};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const HIDDEN: usize = 64;
pub const FEATURES: usize = 2;
pub const LAYERS: usize = 2;
const GATES: usize = 4;

/// Gate blocks inside the stacked `4H` pre-activation, in order.
const INPUT_GATE: usize = 0;
const FORGET_GATE: usize = 1;
const CELL_GATE: usize = 2;
const OUTPUT_GATE: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    /// `4H x in`.
    pub input_weights: Matrix,
    /// `4H x H`.
    pub recurrent_weights: Matrix,
    /// `4H x 1`.
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights {
    pub layers: [LstmLayer; LAYERS],
    /// `2 x H`.
    pub projection: Matrix,
    /// `2 x 1`.
    pub projection_bias: Matrix,
}

/// Feature vector of one cycle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURES]);

impl LstmWeights {
    /// Uniform `[-1/sqrt(H), 1/sqrt(H)]` weights, zero biases except the
    /// forget gate at 1.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (HIDDEN as f64).sqrt();
        let mut uniform = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(-bound..=bound));
        let mut layer = |inputs: usize| {
            let input_weights = uniform(GATES * HIDDEN, inputs);
            let recurrent_weights = uniform(GATES * HIDDEN, HIDDEN);
            let mut bias = Matrix::zeros(GATES * HIDDEN, 1);
            bias.rows_mut(FORGET_GATE * HIDDEN, HIDDEN).fill(1.0);
            LstmLayer { input_weights, recurrent_weights, bias }
        };
        let l1 = layer(CHANNELS);
        let l2 = layer(HIDDEN);
        let projection = uniform(FEATURES, HIDDEN);
        Self { layers: [l1, l2], projection, projection_bias: Matrix::zeros(FEATURES, 1) }
    }

    pub fn zeros() -> Self {
        let layer = |inputs: usize| LstmLayer {
            input_weights: Matrix::zeros(GATES * HIDDEN, inputs),
            recurrent_weights: Matrix::zeros(GATES * HIDDEN, HIDDEN),
            bias: Matrix::zeros(GATES * HIDDEN, 1),
        };
        Self {
            layers: [layer(CHANNELS), layer(HIDDEN)],
            projection: Matrix::zeros(FEATURES, HIDDEN),
            projection_bias: Matrix::zeros(FEATURES, 1),
        }
    }

    /// Tensors in a fixed order: per layer input, recurrent, bias; then
    /// projection and its bias.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut v = Vec::with_capacity(3 * LAYERS + 2);
        for l in &self.layers {
            v.extend([&l.input_weights, &l.recurrent_weights, &l.bias]);
        }
        v.extend([&self.projection, &self.projection_bias]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = Vec::with_capacity(3 * LAYERS + 2);
        for l in &mut self.layers {
            v.extend([&mut l.input_weights, &mut l.recurrent_weights, &mut l.bias]);
        }
        v.extend([&mut self.projection, &mut self.projection_bias]);
        v
    }

    pub fn tensor_names() -> Vec<String> {
        let mut names = Vec::new();
        for l in 1..=LAYERS {
            for t in ["input_weights", "recurrent_weights", "bias"] {
                names.push(format!("layer{l}.{t}"));
            }
        }
        names.push("projection".into());
        names.push("projection_bias".into());
        names
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// Records every tensor as a leaf.
    pub fn to_tape(&self, tape: &mut Tape, requires_grad: bool) -> Result<LstmVars> {
        let vars =
            self.tensors().into_iter().map(|m| tape.leaf(m.clone(), requires_grad)).collect::<Result<Vec<_>>>()?;
        Ok(LstmVars { vars })
    }

    pub fn write_tensors(&self, file: &mut TensorFile, prefix: &str) {
        for (name, m) in Self::tensor_names().iter().zip(self.tensors()) {
            file.insert(format!("{prefix}{name}"), m.clone());
        }
    }

    pub fn read_tensors(file: &TensorFile, prefix: &str) -> Result<Self> {
        let mut w = Self::zeros();
        for (name, slot) in Self::tensor_names().iter().zip(w.tensors_mut()) {
            let m = file.get(&format!("{prefix}{name}"))?;
            if m.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "{prefix}{name}: expected {}x{}, got {}x{}",
                    slot.nrows(),
                    slot.ncols(),
                    m.nrows(),
                    m.ncols()
                )));
            }
            *slot = m.clone();
        }
        Ok(w)
    }
}

pub fn lstm_init(seed: u64) -> LstmWeights {
    LstmWeights::init(seed)
}

/// Tape handles for a [`LstmWeights`], in [`LstmWeights::tensors`] order.
#[derive(Clone, Debug)]
pub struct LstmVars {
    pub vars: Vec<Var>,
}

impl LstmVars {
    fn layer(&self, l: usize) -> (Var, Var, Var) {
        (self.vars[3 * l], self.vars[3 * l + 1], self.vars[3 * l + 2])
    }

    fn projection(&self) -> (Var, Var) {
        (self.vars[3 * LAYERS], self.vars[3 * LAYERS + 1])
    }

    /// Reads the accumulated gradients back in tensor order.
    pub fn grads(&self, tape: &Tape) -> Vec<Matrix> {
        self.vars.iter().map(|&v| tape.grad(v)).collect()
    }
}

/// Runs every profile through the extractor and returns a `B x 2` node whose
/// row `k` is the feature of `profiles[k]`.
pub fn forward_batch(tape: &mut Tape, w: &LstmVars, profiles: &[&CycleProfile]) -> Result<Var> {
    if profiles.is_empty() {
        return Err(Error::invalid("no profiles to extract"));
    }
    let batch = profiles.len();
    for p in profiles {
        if p.matrix().shape() != (PROFILE_STEPS, CHANNELS) {
            return Err(Error::Dimension {
                op: "lstm_forward",
                detail: format!("profile is {}x{}", p.matrix().nrows(), p.matrix().ncols()),
            });
        }
    }
    let mut sequence: Vec<Var> = (0..PROFILE_STEPS)
        .map(|t| {
            let x = Matrix::from_fn(CHANNELS, batch, |c, b| profiles[b].matrix()[(t, c)]);
            tape.constant(x)
        })
        .collect::<Result<_>>()?;

    for l in 0..LAYERS {
        let (wx, wh, bias) = w.layer(l);
        let mut h = tape.constant(Matrix::zeros(HIDDEN, batch))?;
        let mut c = tape.constant(Matrix::zeros(HIDDEN, batch))?;
        let mut outputs = Vec::with_capacity(PROFILE_STEPS);
        for &x in &sequence {
            let zx = tape.matmul(wx, x)?;
            let zh = tape.matmul(wh, h)?;
            let z = tape.add(zx, zh)?;
            let z = tape.add(z, bias)?;
            let gate = |tape: &mut Tape, k: usize| tape.slice(z, k * HIDDEN..(k + 1) * HIDDEN, 0..batch);
            let i = gate(tape, INPUT_GATE)?;
            let i = tape.sigmoid(i)?;
            let f = gate(tape, FORGET_GATE)?;
            let f = tape.sigmoid(f)?;
            let g = gate(tape, CELL_GATE)?;
            let g = tape.tanh(g)?;
            let o = gate(tape, OUTPUT_GATE)?;
            let o = tape.sigmoid(o)?;
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, g)?;
            c = tape.add(fc, ig)?;
            let tc = tape.tanh(c)?;
            h = tape.mul(o, tc)?;
            outputs.push(h);
        }
        sequence = outputs;
    }

    let (p, pb) = w.projection();
    let last = *sequence.last().expect("20 steps");
    let out = tape.matmul(p, last)?;
    let out = tape.add(out, pb)?;
    tape.transpose(out)
}

/// Feature of a single profile, as a `1 x 2` node.
pub fn lstm_forward(tape: &mut Tape, w: &LstmVars, profile: &CycleProfile) -> Result<Var> {
    forward_batch(tape, w, &[profile])
}

/// Features as an `N x 2` matrix. Runs without a tape but performs the same
/// floating-point operations in the same order as [`forward_batch`].
pub fn feature_matrix(weights: &LstmWeights, profiles: &[CycleProfile]) -> Result<Matrix> {
    if profiles.is_empty() {
        return Err(Error::invalid("no profiles to extract"));
    }
    if !weights.is_finite() {
        return Err(Error::NonFinite("lstm weights".into()));
    }
    let batch = profiles.len();
    let mut sequence: Vec<Matrix> = Vec::with_capacity(PROFILE_STEPS);
    for t in 0..PROFILE_STEPS {
        let mut x = Matrix::zeros(CHANNELS, batch);
        for (b, p) in profiles.iter().enumerate() {
            let m = p.matrix();
            if m.shape() != (PROFILE_STEPS, CHANNELS) {
                return Err(Error::Dimension {
                    op: "lstm_forward",
                    detail: format!("profile is {}x{}", m.nrows(), m.ncols()),
                });
            }
            for c in 0..CHANNELS {
                x[(c, b)] = m[(t, c)];
            }
        }
        sequence.push(x);
    }

    let sigmoid = crate::autodiff::sigmoid;
    for layer in &weights.layers {
        let mut h = Matrix::zeros(HIDDEN, batch);
        let mut c = Matrix::zeros(HIDDEN, batch);
        let mut outputs = Vec::with_capacity(PROFILE_STEPS);
        for x in &sequence {
            let zx = &layer.input_weights * x;
            let zh = &layer.recurrent_weights * &h;
            let z = zx + zh;
            for b in 0..batch {
                for r in 0..HIDDEN {
                    let pre = |k: usize| z[(k * HIDDEN + r, b)] + layer.bias[(k * HIDDEN + r, 0)];
                    let i = sigmoid(pre(INPUT_GATE));
                    let f = sigmoid(pre(FORGET_GATE));
                    let g = pre(CELL_GATE).tanh();
                    let o = sigmoid(pre(OUTPUT_GATE));
                    let cell = f * c[(r, b)] + i * g;
                    c[(r, b)] = cell;
                    h[(r, b)] = o * cell.tanh();
                }
            }
            outputs.push(h.clone());
        }
        sequence = outputs;
    }
    let last = sequence.last().expect("20 steps");
    let mut out = &weights.projection * last;
    for mut col in out.column_iter_mut() {
        col += &weights.projection_bias;
    }
    Ok(out.transpose())
}

pub fn extract_features(weights: &LstmWeights, profiles: &[CycleProfile]) -> Result<Vec<FeatureVector>> {
    let m = feature_matrix(weights, profiles)?;
    Ok(m.row_iter().map(|r| FeatureVector([r[0], r[1]])).collect())
}
