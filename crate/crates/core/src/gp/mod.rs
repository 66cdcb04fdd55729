//! Gaussian process layers: RBF kernel, exact regression, and the two-layer
//! deep GP.

pub mod dgp;
pub mod gpr;
pub mod kernel;

pub use dgp::{
    dgp_forward_sample, dgp_predict, dgp_predict_with, dgp_train, train_dgp, DgpInputs, DgpModel, DgpTrainConfig,
    DgpTrainOutcome, NoiseMode,
};
pub use gpr::{gpr_fit, gpr_predict, GpHyper, GpLayer, GpPosterior, GprFit};
pub use kernel::{rbf_eval, RbfKernel};

/// Predictive mean and variance with the matching ±2σ interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionResult {
    pub mean: f64,
    pub variance: f64,
    pub lower2s: f64,
    pub upper2s: f64,
}

impl PredictionResult {
    /// Negative variances are clamped to zero.
    pub fn new(mean: f64, variance: f64) -> Self {
        let variance = variance.max(0.0);
        let sd = variance.sqrt();
        Self { mean, variance, lower2s: mean - 2.0 * sd, upper2s: mean + 2.0 * sd }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Shifts the mean, keeping the variance.
    pub fn offset(&self, by: f64) -> Self {
        Self::new(self.mean + by, self.variance)
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.lower2s <= truth && truth <= self.upper2s
    }
}
