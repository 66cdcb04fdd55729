//! Exact single-layer GP regression with a constant mean.

use std::cmp::Ordering;
use std::f64::consts::PI;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gp::kernel::{rbf_gram_tape, RbfKernel};
use crate::gp::PredictionResult;
use crate::linalg::{cholesky_jittered, Matrix};

/// Kernel, constant mean and observation noise of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GpHyper {
    pub kernel: RbfKernel,
    pub constant_mean: f64,
    pub log_noise_variance: f64,
}

impl GpHyper {
    pub fn new(kernel: RbfKernel, constant_mean: f64, noise_variance: f64) -> Result<Self> {
        if !(noise_variance > 0.0) {
            return Err(Error::invalid("noise variance must be positive"));
        }
        Ok(Self { kernel, constant_mean, log_noise_variance: noise_variance.ln() })
    }

    /// Mean at the target average, signal variance at the target variance,
    /// noise at a tenth of it, lengthscales at each input column's spread.
    pub fn from_data(inputs: &Matrix, targets: &Matrix) -> Result<Self> {
        let n = targets.len() as f64;
        let mean = targets.sum() / n;
        let var = (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).max(1e-8);
        let ls: Vec<f64> = inputs
            .column_iter()
            .map(|c| {
                let m = c.sum() / c.len() as f64;
                let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c.len() as f64).sqrt();
                sd.max(1e-3)
            })
            .collect();
        Self::new(RbfKernel::new(var, &ls)?, mean, 0.1 * var)
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    pub fn dims(&self) -> usize {
        self.kernel.dims()
    }

    /// `[log s², log ℓ (1 x d), log σ², mean]`.
    pub fn to_params(&self) -> Vec<Matrix> {
        vec![
            Matrix::from_element(1, 1, self.kernel.log_signal_variance),
            Matrix::from_row_slice(1, self.dims(), &self.kernel.log_lengthscales),
            Matrix::from_element(1, 1, self.log_noise_variance),
            Matrix::from_element(1, 1, self.constant_mean),
        ]
    }

    pub fn from_params(p: &[Matrix]) -> Self {
        Self {
            kernel: RbfKernel { log_signal_variance: p[0][(0, 0)], log_lengthscales: p[1].iter().copied().collect() },
            log_noise_variance: p[2][(0, 0)],
            constant_mean: p[3][(0, 0)],
        }
    }

    pub fn to_tape(&self, tape: &mut Tape, requires_grad: bool) -> Result<HyperVars> {
        let p = self.to_params();
        Ok(HyperVars {
            log_signal_variance: tape.leaf(p[0].clone(), requires_grad)?,
            log_lengthscales: tape.leaf(p[1].clone(), requires_grad)?,
            log_noise_variance: tape.leaf(p[2].clone(), requires_grad)?,
            constant_mean: tape.leaf(p[3].clone(), requires_grad)?,
        })
    }
}

/// Tape handles for a [`GpHyper`].
#[derive(Clone, Copy, Debug)]
pub struct HyperVars {
    pub log_signal_variance: Var,
    pub log_lengthscales: Var,
    pub log_noise_variance: Var,
    pub constant_mean: Var,
}

impl HyperVars {
    pub fn vars(&self) -> [Var; 4] {
        [self.log_signal_variance, self.log_lengthscales, self.log_noise_variance, self.constant_mean]
    }

    pub fn grads(&self, tape: &Tape) -> Vec<Matrix> {
        self.vars().iter().map(|&v| tape.grad(v)).collect()
    }
}

/// `K(x, x) + σ² I` on the tape.
pub fn noisy_gram_tape(tape: &mut Tape, h: &HyperVars, x: Var) -> Result<Var> {
    let n = tape.value(x).nrows();
    let k = rbf_gram_tape(tape, h.log_signal_variance, h.log_lengthscales, x, x)?;
    let eye = tape.constant(Matrix::identity(n, n))?;
    let noise = tape.exp(h.log_noise_variance)?;
    let noise = tape.mul(eye, noise)?;
    tape.add(k, noise)
}

/// Exact log marginal likelihood of every column of `y` (`n x d_out`) under
/// `N(mean·1, K(x, x) + σ² I)`, summed over columns.
pub fn log_marginal_likelihood_tape(tape: &mut Tape, h: &HyperVars, x: Var, y: Var) -> Result<Var> {
    let (n, d_out) = tape.value(y).shape();
    if tape.value(x).nrows() != n {
        return Err(Error::Dimension {
            op: "log_marginal_likelihood",
            detail: format!("{} inputs but {n} targets", tape.value(x).nrows()),
        });
    }
    let a = noisy_gram_tape(tape, h, x)?;
    log_likelihood_given_cov(tape, a, h.constant_mean, y, n, d_out)
}

pub(crate) fn log_likelihood_given_cov(
    tape: &mut Tape,
    cov: Var,
    mean: Var,
    y: Var,
    n: usize,
    d_out: usize,
) -> Result<Var> {
    let resid = tape.sub(y, mean)?;
    let alpha = tape.spd_solve(cov, resid)?;
    let prod = tape.mul(resid, alpha)?;
    let quad = tape.sum(prod)?;
    let quad = tape.scale(quad, -0.5)?;
    let logdet = tape.spd_logdet(cov)?;
    let logdet = tape.scale(logdet, -0.5 * d_out as f64)?;
    let sum = tape.add(quad, logdet)?;
    tape.add_const(sum, -0.5 * (n * d_out) as f64 * (2.0 * PI).ln())
}

pub fn log_marginal_likelihood(hyper: &GpHyper, inputs: &Matrix, targets: &Matrix) -> Result<f64> {
    let mut tape = Tape::new();
    let h = hyper.to_tape(&mut tape, false)?;
    let x = tape.constant(inputs.clone())?;
    let y = tape.constant(targets.clone())?;
    let l = log_marginal_likelihood_tape(&mut tape, &h, x, y)?;
    Ok(tape.scalar_value(l))
}

#[derive(Clone, Debug)]
struct Conditioning {
    inputs: Matrix,
    targets: Matrix,
    /// Lower Cholesky factor of `K + (σ² + jitter) I`.
    chol_l: Matrix,
    /// `(K + σ² I)^-1 (T - mean)`, one column per output.
    alpha: Matrix,
}

/// A GP layer, optionally conditioned on training data.
#[derive(Clone, Debug)]
pub struct GpLayer {
    pub hyper: GpHyper,
    conditioning: Option<Conditioning>,
}

/// Posterior at one input: a mean per output column and the shared latent
/// variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GpPosterior {
    pub mean: Vec<f64>,
    pub latent_variance: f64,
    pub noise_variance: f64,
}

impl GpPosterior {
    pub fn latent(&self, dim: usize) -> PredictionResult {
        PredictionResult::new(self.mean[dim], self.latent_variance)
    }

    pub fn observed(&self, dim: usize) -> PredictionResult {
        PredictionResult::new(self.mean[dim], self.latent_variance + self.noise_variance)
    }
}

impl GpLayer {
    pub fn unfitted(hyper: GpHyper) -> Self {
        Self { hyper, conditioning: None }
    }

    /// Conditions on `inputs` (`n x d`) and `targets` (`n x d_out`). Rows are
    /// put in a canonical order first so the factorization does not depend on
    /// how the caller ordered them.
    pub fn condition(hyper: GpHyper, inputs: &Matrix, targets: &Matrix) -> Result<Self> {
        let n = inputs.nrows();
        if n == 0 || targets.nrows() != n || targets.ncols() == 0 {
            return Err(Error::Dimension {
                op: "gp_condition",
                detail: format!("{} inputs, {}x{} targets", n, targets.nrows(), targets.ncols()),
            });
        }
        if inputs.ncols() != hyper.dims() {
            return Err(Error::Dimension {
                op: "gp_condition",
                detail: format!("kernel has {} dims, inputs have {}", hyper.dims(), inputs.ncols()),
            });
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gp training data".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let key = |i: usize| inputs.row(i).iter().chain(targets.row(i).iter()).copied().collect::<Vec<_>>();
            key(a)
                .iter()
                .zip(key(b).iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
        let inputs = inputs.select_rows(order.iter());
        let targets = targets.select_rows(order.iter());

        let mut a = hyper.kernel.gram(&inputs, &inputs)?;
        for i in 0..n {
            a[(i, i)] += hyper.noise_variance();
        }
        let factor = cholesky_jittered(&a)?;
        let centered = targets.map(|t| t - hyper.constant_mean);
        let alpha = factor.solve(&centered);
        let chol_l = factor.chol.l();
        Ok(Self { hyper, conditioning: Some(Conditioning { inputs, targets, chol_l, alpha }) })
    }

    pub fn is_fitted(&self) -> bool {
        self.conditioning.is_some()
    }

    fn cond(&self) -> Result<&Conditioning> {
        self.conditioning.as_ref().ok_or(Error::NotFitted)
    }

    /// Training inputs in canonical order.
    pub fn inputs(&self) -> Result<&Matrix> {
        Ok(&self.cond()?.inputs)
    }

    pub fn targets(&self) -> Result<&Matrix> {
        Ok(&self.cond()?.targets)
    }

    pub fn d_in(&self) -> usize {
        self.hyper.dims()
    }

    pub fn d_out(&self) -> Result<usize> {
        Ok(self.cond()?.targets.ncols())
    }

    pub fn predict(&self, x: &[f64]) -> Result<GpPosterior> {
        let c = self.cond()?;
        if x.len() != self.d_in() {
            return Err(Error::Dimension {
                op: "gp_predict",
                detail: format!("layer expects {} inputs, got {}", self.d_in(), x.len()),
            });
        }
        let xs = Matrix::from_row_slice(1, x.len(), x);
        let kstar = self.hyper.kernel.gram(&c.inputs, &xs)?;
        let mean: Vec<f64> =
            (0..c.alpha.ncols()).map(|j| self.hyper.constant_mean + kstar.column(0).dot(&c.alpha.column(j))).collect();
        let v = c.chol_l.solve_lower_triangular(&kstar).ok_or_else(|| Error::NotPositiveDefinite { jitter: 0.0 })?;
        let latent_variance = self.hyper.kernel.signal_variance() - v.column(0).norm_squared();
        Ok(GpPosterior { mean, latent_variance, noise_variance: self.hyper.noise_variance() })
    }

    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        let c = self.cond()?;
        log_marginal_likelihood(&self.hyper, &c.inputs, &c.targets)
    }
}

pub fn gpr_predict(layer: &GpLayer, x: &[f64]) -> Result<GpPosterior> {
    layer.predict(x)
}

#[derive(Clone, Debug)]
pub struct GprFit {
    pub layer: GpLayer,
    /// Log marginal likelihood after each accepted step, starting at `init`.
    pub lml_trace: Vec<f64>,
}

/// Steps tried per iteration before giving up on improving.
const MAX_HALVINGS: usize = 30;

/// Gradient ascent on the exact log marginal likelihood per training point.
/// A step that lowers the likelihood is halved until it does not; the next
/// iteration starts again from `lr`.
pub fn gpr_fit(inputs: &Matrix, targets: &Matrix, init: GpHyper, steps: usize, lr: f64) -> Result<GprFit> {
    let n = inputs.nrows();
    if n < 1 || targets.nrows() != n {
        return Err(Error::invalid(format!("gpr_fit: {n} inputs, {} targets", targets.nrows())));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("gpr targets".into()));
    }
    let scale = 1.0 / n as f64;
    let eval = |params: &[Matrix], with_grad: bool| -> Result<(f64, Vec<Matrix>)> {
        let hyper = GpHyper::from_params(params);
        let mut tape = Tape::new();
        let h = hyper.to_tape(&mut tape, with_grad)?;
        let x = tape.constant(inputs.clone())?;
        let y = tape.constant(targets.clone())?;
        let l = log_marginal_likelihood_tape(&mut tape, &h, x, y)?;
        let value = tape.scalar_value(l);
        if !with_grad {
            return Ok((value, vec![]));
        }
        tape.backward(l)?;
        Ok((value, h.grads(&tape)))
    };

    let mut params = init.to_params();
    let mut trace = vec![eval(&params, false)?.0];
    if n >= 2 {
        for _ in 0..steps {
            let current = *trace.last().expect("non-empty");
            let (_, grads) = eval(&params, true)?;
            let mut step = lr * scale;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let cand: Vec<Matrix> = params.iter().zip(&grads).map(|(p, g)| p + g * step).collect();
                match eval(&cand, false) {
                    Ok((v, _)) if v.is_finite() && v >= current => {
                        accepted = Some((cand, v));
                        break;
                    }
                    _ => step *= 0.5,
                }
            }
            match accepted {
                Some((cand, v)) => {
                    params = cand;
                    trace.push(v);
                }
                None => break,
            }
        }
    }
    let layer = GpLayer::condition(GpHyper::from_params(&params), inputs, targets)?;
    Ok(GprFit { layer, lml_trace: trace })
}
