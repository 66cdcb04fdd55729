//! Two-layer deep GP.
//!
//! Each layer's output is sampled as `f_l = μ_l(f_{l-1}) + ε_l·sqrt(K_l(f_{l-1}, f_{l-1}))`
//! with `μ_l`, `K_l` the layer's posterior mean and latent variance. The
//! hidden layer is conditioned on its own inputs (identity targets), so at
//! training inputs it passes features through and away from them it reverts
//! to its constant mean with growing variance. Hidden width therefore equals
//! the input dimension.
//!
//! Training maximizes, per training point, the exact log marginal likelihood
//! of the hidden layer's targets plus that of the final targets at one
//! reparameterized hidden sample drawn fresh each epoch. Gradients reach the
//! hyperparameters of both layers and, when present, the LSTM extractor.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::TensorFile;
use crate::data::CycleProfile;
use crate::error::{Error, Result};
use crate::gp::gpr::{
    log_likelihood_given_cov, log_marginal_likelihood_tape, noisy_gram_tape, GpHyper, GpLayer, HyperVars,
};
use crate::gp::kernel::{rbf_gram_tape, RbfKernel};
use crate::gp::PredictionResult;
use crate::linalg::Matrix;
use crate::lstm::{forward_batch, LstmVars, LstmWeights};

pub const DEFAULT_SAMPLES: usize = 100;
/// Consecutive non-finite step attempts tolerated before aborting.
pub const MAX_REJECTIONS: usize = 20;
/// Added to sampled latent variances during training so `sqrt` stays finite.
const VARIANCE_FLOOR: f64 = 1e-10;
/// Lower bound on each layer's noise variance relative to its initial value.
const NOISE_FLOOR_RATIO: f64 = 1e-3;

static NEGATIVE_VARIANCE_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of times a negative latent variance was clamped to zero while
/// sampling, process wide.
pub fn negative_variance_clamps() -> u64 {
    NEGATIVE_VARIANCE_CLAMPS.load(Ordering::Relaxed)
}

#[derive(Clone, Debug)]
pub struct DgpModel {
    pub layer1: GpLayer,
    pub layer2: GpLayer,
    /// Monte Carlo draws per prediction.
    pub samples: usize,
    pub seed: u64,
}

impl DgpModel {
    /// Hyperparameters initialized from the data; layer 1 conditioned on
    /// identity targets, layer 2 on `targets` at the same inputs.
    pub fn init(inputs: &Matrix, targets: &[f64], samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let t = Matrix::from_column_slice(targets.len(), 1, targets);
        let h1 = GpHyper::from_data(inputs, inputs)?;
        let h2 = GpHyper::from_data(inputs, &t)?;
        Ok(Self {
            layer1: GpLayer::condition(h1, inputs, inputs)?,
            layer2: GpLayer::condition(h2, inputs, &t)?,
            samples,
            seed,
        })
    }

    pub fn hidden_width(&self) -> usize {
        self.layer1.d_in()
    }

    pub fn write_tensors(&self, file: &mut TensorFile, prefix: &str) -> Result<()> {
        for (name, layer) in [("layer1", &self.layer1), ("layer2", &self.layer2)] {
            let h = &layer.hyper;
            let p = format!("{prefix}{name}.");
            file.insert_scalar(format!("{p}log_signal_variance"), h.kernel.log_signal_variance);
            file.insert(
                format!("{p}log_lengthscales"),
                Matrix::from_row_slice(1, h.dims(), &h.kernel.log_lengthscales),
            );
            file.insert_scalar(format!("{p}log_noise_variance"), h.log_noise_variance);
            file.insert_scalar(format!("{p}constant_mean"), h.constant_mean);
            file.insert(format!("{p}inputs"), layer.inputs()?.clone());
            file.insert(format!("{p}targets"), layer.targets()?.clone());
        }
        file.insert_scalar(format!("{prefix}samples"), self.samples as f64);
        // Two 32-bit halves so the seed survives the f64 round trip.
        file.insert(
            format!("{prefix}seed"),
            Matrix::from_row_slice(1, 2, &[(self.seed >> 32) as f64, (self.seed & 0xffff_ffff) as f64]),
        );
        Ok(())
    }

    pub fn read_tensors(file: &TensorFile, prefix: &str) -> Result<Self> {
        let layer = |name: &str| -> Result<GpLayer> {
            let p = format!("{prefix}{name}.");
            let hyper = GpHyper {
                kernel: RbfKernel {
                    log_signal_variance: file.get_scalar(&format!("{p}log_signal_variance"))?,
                    log_lengthscales: file.get(&format!("{p}log_lengthscales"))?.iter().copied().collect(),
                },
                log_noise_variance: file.get_scalar(&format!("{p}log_noise_variance"))?,
                constant_mean: file.get_scalar(&format!("{p}constant_mean"))?,
            };
            GpLayer::condition(hyper, file.get(&format!("{p}inputs"))?, file.get(&format!("{p}targets"))?)
        };
        Ok(Self {
            layer1: layer("layer1")?,
            layer2: layer("layer2")?,
            samples: file.get_scalar(&format!("{prefix}samples"))? as usize,
            seed: {
                let s = file.get(&format!("{prefix}seed"))?;
                if s.shape() != (1, 2) {
                    return Err(Error::Checkpoint("seed must be 1x2".into()));
                }
                ((s[0] as u64) << 32) | s[1] as u64
            },
        })
    }
}

/// One draw through both layers with caller-supplied standard normals:
/// `eps1` has one entry per hidden dimension, `eps2` is the output draw.
pub fn dgp_forward_sample(model: &DgpModel, x: &[f64], eps1: &[f64], eps2: f64) -> Result<f64> {
    let hidden = sample_layer(&model.layer1, x, eps1)?;
    Ok(sample_layer(&model.layer2, &hidden, &[eps2])?[0])
}

/// `μ(x) + ε·sqrt(K(x, x))` per output dimension of one layer.
pub fn sample_layer(layer: &GpLayer, x: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    let post = layer.predict(x)?;
    if eps.len() != post.mean.len() {
        return Err(Error::Dimension {
            op: "dgp_forward_sample",
            detail: format!("layer has {} outputs, got {} draws", post.mean.len(), eps.len()),
        });
    }
    let var = if post.latent_variance < 0.0 {
        NEGATIVE_VARIANCE_CLAMPS.fetch_add(1, Ordering::Relaxed);
        0.0
    } else {
        post.latent_variance
    };
    let sd = var.sqrt();
    Ok(post.mean.iter().zip(eps).map(|(m, e)| m + e * sd).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    /// Standard normal draws from the model seed; draw `s` uses stream `s`.
    Seeded,
    /// Every draw is zero, giving the composed posterior means.
    Zero,
}

/// Random stream for Monte Carlo draw `draw`; independent of evaluation order.
pub fn draw_rng(seed: u64, draw: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw);
    rng
}

pub fn dgp_predict(model: &DgpModel, x: &[f64]) -> Result<PredictionResult> {
    dgp_predict_with(model, x, NoiseMode::Seeded)
}

/// Sample mean and variance over `model.samples` draws, plus the output
/// layer's noise variance.
pub fn dgp_predict_with(model: &DgpModel, x: &[f64], mode: NoiseMode) -> Result<PredictionResult> {
    if model.samples == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let width = model.hidden_width();
    let mut draws = Vec::with_capacity(model.samples);
    let mut eps1 = vec![0.0; width];
    for s in 0..model.samples {
        let eps2 = match mode {
            NoiseMode::Zero => 0.0,
            NoiseMode::Seeded => {
                let mut rng = draw_rng(model.seed, s as u64);
                for e in eps1.iter_mut() {
                    *e = StandardNormal.sample(&mut rng);
                }
                StandardNormal.sample(&mut rng)
            }
        };
        draws.push(dgp_forward_sample(model, x, &eps1, eps2)?);
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = if draws.len() > 1 { draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(PredictionResult::new(mean, var + model.layer2.hyper.noise_variance()))
}

/// Where the first layer's inputs come from during training.
#[derive(Clone, Copy, Debug)]
pub enum DgpInputs<'a> {
    /// Fixed `N x d` inputs, e.g. cycle indices.
    Fixed(&'a Matrix),
    /// Features of normalized profiles through a trainable extractor.
    Lstm { weights: &'a LstmWeights, profiles: &'a [CycleProfile] },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DgpTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DgpTrainConfig {
    fn default() -> Self {
        Self { epochs: 200, lr: 0.1, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct DgpTrainOutcome {
    pub model: DgpModel,
    pub lstm: Option<LstmWeights>,
    /// Objective per epoch at the parameters the step started from.
    pub loss_trace: Vec<f64>,
    /// Epochs in which no block accepted a step.
    pub skipped_epochs: usize,
    /// Accepted step size per epoch for the GP hyperparameters and for the
    /// extractor weights, zero where the block was rejected or absent.
    pub step_sizes: Vec<[f64; 2]>,
}

struct Params {
    layer1: Vec<Matrix>,
    layer2: Vec<Matrix>,
    lstm: Option<LstmWeights>,
}

impl Params {
    fn flat(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = self.layer1.iter().chain(&self.layer2).collect();
        if let Some(w) = &self.lstm {
            v.extend(w.tensors());
        }
        v
    }

    fn stepped(&self, grads: &[Matrix], step: f64, floors: [f64; 2]) -> Self {
        let mut out = Params { layer1: self.layer1.clone(), layer2: self.layer2.clone(), lstm: self.lstm.clone() };
        let mut slots: Vec<&mut Matrix> = out.layer1.iter_mut().chain(out.layer2.iter_mut()).collect();
        if let Some(w) = out.lstm.as_mut() {
            slots.extend(w.tensors_mut());
        }
        for (slot, g) in slots.into_iter().zip(grads) {
            *slot += g * step;
        }
        for (layer, floor) in [&mut out.layer1, &mut out.layer2].into_iter().zip(floors) {
            let noise = &mut layer[2][(0, 0)];
            *noise = noise.max(floor);
        }
        out
    }
}

struct Evaluation {
    value: f64,
    grads: Vec<Matrix>,
    features: Matrix,
}

fn evaluate(
    params: &Params,
    inputs: &DgpInputs<'_>,
    targets: &Matrix,
    eps1: &Matrix,
    layer1_targets: Option<&Matrix>,
    with_grad: bool,
) -> Result<Evaluation> {
    let mut tape = Tape::new();
    let h1 = GpHyper::from_params(&params.layer1).to_tape(&mut tape, with_grad)?;
    let h2 = GpHyper::from_params(&params.layer2).to_tape(&mut tape, with_grad)?;
    let lstm_vars: Option<LstmVars> = match &params.lstm {
        Some(w) => Some(w.to_tape(&mut tape, with_grad)?),
        None => None,
    };
    let features = match (inputs, &lstm_vars) {
        (DgpInputs::Fixed(m), _) => tape.constant((*m).clone())?,
        (DgpInputs::Lstm { profiles, .. }, Some(vars)) if with_grad => {
            let refs: Vec<&CycleProfile> = profiles.iter().collect();
            forward_batch(&mut tape, vars, &refs)?
        }
        (DgpInputs::Lstm { profiles, .. }, Some(_)) => {
            let w = params.lstm.as_ref().expect("weights present");
            tape.constant(crate::lstm::feature_matrix(w, profiles)?)?
        }
        (DgpInputs::Lstm { .. }, None) => unreachable!("lstm inputs always carry weights"),
    };
    let objective = objective_on_tape(&mut tape, &h1, &h2, features, layer1_targets, targets, eps1)?;
    let value = tape.scalar_value(objective);
    let feature_values = tape.value(features).clone();
    if !with_grad || !value.is_finite() {
        return Ok(Evaluation { value, grads: vec![], features: feature_values });
    }
    tape.backward(objective)?;
    let mut grads = h1.grads(&tape);
    grads.extend(h2.grads(&tape));
    if let Some(vars) = &lstm_vars {
        grads.extend(vars.grads(&tape));
    }
    Ok(Evaluation { value, grads, features: feature_values })
}

/// Per-point objective for `features` (`N x d`), final targets (`N x 1`) and
/// hidden draws `eps1` (`N x d`). Layer 1 is conditioned on
/// `layer1_targets`, or on the features themselves when `None`; either way
/// the targets are data, not a path for gradients.
fn objective_on_tape(
    tape: &mut Tape,
    h1: &HyperVars,
    h2: &HyperVars,
    features: Var,
    layer1_targets: Option<&Matrix>,
    targets: &Matrix,
    eps1: &Matrix,
) -> Result<Var> {
    let (n, d) = tape.value(features).shape();
    let hidden_targets = match layer1_targets {
        Some(t) => tape.constant(t.clone())?,
        None => tape.constant(tape.value(features).clone())?,
    };

    let a1 = noisy_gram_tape(tape, h1, features)?;
    let lml1 = log_likelihood_given_cov(tape, a1, h1.constant_mean, hidden_targets, n, d)?;

    let k1 = rbf_gram_tape(tape, h1.log_signal_variance, h1.log_lengthscales, features, features)?;
    let centered = tape.sub(hidden_targets, h1.constant_mean)?;
    let alpha = tape.spd_solve(a1, centered)?;
    let mu = tape.matmul(k1, alpha)?;
    let mu = tape.add(mu, h1.constant_mean)?;
    let b = tape.spd_solve(a1, k1)?;
    let explained = tape.mul(k1, b)?;
    let explained = tape.sum_rows(explained)?;
    let sv = tape.exp(h1.log_signal_variance)?;
    let var = tape.sub(sv, explained)?;
    let var = tape.add_const(var, VARIANCE_FLOOR)?;
    let sd = tape.sqrt(var)?;
    let eps = tape.constant(eps1.clone())?;
    let noise = tape.mul(eps, sd)?;
    let hidden = tape.add(mu, noise)?;

    let y = tape.constant(targets.clone())?;
    let lml2 = log_marginal_likelihood_tape(tape, h2, hidden, y)?;
    let total = tape.add(lml1, lml2)?;
    tape.scale(total, 1.0 / n as f64)
}

/// Joint gradient ascent. Each epoch draws fresh hidden-layer noise, takes a
/// step of size `lr` along the gradient and halves it until the objective
/// (at the same noise) does not decrease.
pub fn train_dgp(
    model: &DgpModel,
    inputs: DgpInputs<'_>,
    targets: &[f64],
    config: &DgpTrainConfig,
) -> Result<DgpTrainOutcome> {
    let n = targets.len();
    let input_rows = match inputs {
        DgpInputs::Fixed(m) => m.nrows(),
        DgpInputs::Lstm { profiles, .. } => profiles.len(),
    };
    if input_rows != n {
        return Err(Error::invalid(format!("{input_rows} inputs but {n} targets")));
    }
    if n < 2 {
        return Err(Error::invalid("deep GP training needs at least 2 points"));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("deep GP targets".into()));
    }
    let lstm = match inputs {
        DgpInputs::Lstm { weights, .. } => Some(weights.clone()),
        DgpInputs::Fixed(_) => None,
    };
    if config.epochs == 0 {
        return Ok(DgpTrainOutcome {
            model: model.clone(),
            lstm,
            loss_trace: vec![],
            skipped_epochs: 0,
            step_sizes: vec![],
        });
    }
    let width = model.hidden_width();
    let y = Matrix::from_column_slice(n, 1, targets);
    let floors = [
        model.layer1.hyper.log_noise_variance + NOISE_FLOOR_RATIO.ln(),
        model.layer2.hyper.log_noise_variance + NOISE_FLOOR_RATIO.ln(),
    ];
    let mut params = Params { layer1: model.layer1.hyper.to_params(), layer2: model.layer2.hyper.to_params(), lstm };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut skipped = 0;
    let mut steps = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let eps1 = Matrix::from_fn(n, width, |_, _| StandardNormal.sample(&mut rng));
        let current = evaluate(&params, &inputs, &y, &eps1, None, true)?;
        // Candidates keep this epoch's layer-1 targets, so the line search
        // climbs the same function the gradient was taken of.
        let t1 = &current.features;
        if !current.value.is_finite() {
            return Err(Error::TrainingAborted(format!("objective is not finite at epoch {epoch} before stepping")));
        }
        trace.push(current.value);

        // GP hyperparameters and extractor weights get separate step
        // searches: the extractor's gradient is far steeper, and a shared
        // step would leave the hyperparameters where they started.
        let n_hyper = params.layer1.len() + params.layer2.len();
        let masked = |keep_hyper: bool| -> Vec<Matrix> {
            current
                .grads
                .iter()
                .enumerate()
                .map(|(k, g)| if (k < n_hyper) == keep_hyper { g.clone() } else { Matrix::zeros(g.nrows(), g.ncols()) })
                .collect()
        };
        let mut value = current.value;
        let mut step_pair = [0.0; 2];
        let blocks = if params.lstm.is_some() { 2 } else { 1 };
        for block in 0..blocks {
            let grads = masked(block == 0);
            let mut step = config.lr;
            let mut non_finite = 0;
            for _ in 0..MAX_REJECTIONS {
                let cand = params.stepped(&grads, step, floors);
                let ok = cand.flat().iter().all(|m| m.iter().all(|v| v.is_finite()));
                let cand_value = if ok {
                    match evaluate(&cand, &inputs, &y, &eps1, Some(t1), false) {
                        Ok(e) => e.value,
                        Err(Error::NotPositiveDefinite { .. }) | Err(Error::NonFinite(_)) => f64::NAN,
                        Err(e) => return Err(e),
                    }
                } else {
                    f64::NAN
                };
                if cand_value.is_finite() && cand_value >= value {
                    params = cand;
                    value = cand_value;
                    step_pair[block] = step;
                    break;
                }
                if !cand_value.is_finite() {
                    non_finite += 1;
                }
                step *= 0.5;
            }
            if non_finite >= MAX_REJECTIONS {
                return Err(Error::TrainingAborted(format!(
                    "{MAX_REJECTIONS} consecutive non-finite objectives at epoch {epoch}, last objective {}",
                    current.value
                )));
            }
        }
        if step_pair == [0.0; 2] {
            skipped += 1;
        }
        steps.push(step_pair);
    }

    let features = match (&inputs, &params.lstm) {
        (DgpInputs::Fixed(m), _) => (*m).clone(),
        (DgpInputs::Lstm { profiles, .. }, Some(w)) => crate::lstm::feature_matrix(w, profiles)?,
        (DgpInputs::Lstm { .. }, None) => unreachable!(),
    };
    let model = assemble(&params, &features, &y, model.samples, model.seed)?;
    Ok(DgpTrainOutcome { model, lstm: params.lstm, loss_trace: trace, skipped_epochs: skipped, step_sizes: steps })
}

/// Conditions layer 1 on identity targets at `features`, and layer 2 on
/// `y` at the hidden layer's posterior mean over those features.
fn assemble(params: &Params, features: &Matrix, y: &Matrix, samples: usize, seed: u64) -> Result<DgpModel> {
    let layer1 = GpLayer::condition(GpHyper::from_params(&params.layer1), features, features)?;
    let mut hidden = Matrix::zeros(features.nrows(), features.ncols());
    for i in 0..features.nrows() {
        let row: Vec<f64> = features.row(i).iter().copied().collect();
        let post = layer1.predict(&row)?;
        for (j, m) in post.mean.iter().enumerate() {
            hidden[(i, j)] = *m;
        }
    }
    let layer2 = GpLayer::condition(GpHyper::from_params(&params.layer2), &hidden, y)?;
    Ok(DgpModel { layer1, layer2, samples, seed })
}

/// Joint training of a deep GP and an LSTM extractor on residual targets.
pub fn dgp_train(
    model: &DgpModel,
    lstm: &LstmWeights,
    profiles: &[CycleProfile],
    residuals: &[f64],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(DgpModel, LstmWeights, Vec<f64>)> {
    let out =
        train_dgp(model, DgpInputs::Lstm { weights: lstm, profiles }, residuals, &DgpTrainConfig { epochs, lr, seed })?;
    Ok((out.model, out.lstm.expect("lstm inputs"), out.loss_trace))
}
