//! The semiparametric predictor: an explicit trend over cycle index plus a
//! deep GP over LSTM features of each cycle's profile, trained on the trend's
//! residuals.

use crate::checkpoint::TensorFile;
use crate::data::{fit_normalization, CellDataset, CycleProfile, NormalizationStats, CHANNELS};
use crate::emf::{emf_eval, fit_emf, EmfFit, EmfParams};
use crate::error::{Error, Result};
use crate::gp::dgp::{dgp_predict, train_dgp, DgpInputs, DgpModel, DgpTrainConfig, DEFAULT_SAMPLES};
use crate::gp::PredictionResult;
use crate::linalg::Matrix;
use crate::lstm::{feature_matrix, lstm_init, FeatureVector, LstmWeights};

/// Parametric part of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeanKind {
    /// `θ1 + θ2·exp(θ3·i)` fitted by least squares.
    Exponential,
    /// No trend; the deep GP models capacity directly.
    Zero,
    /// Ordinary least-squares line over cycle index.
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdglConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Monte Carlo draws per prediction.
    pub samples: usize,
    pub seed: u64,
    pub mean: MeanKind,
    /// Divide capacities by the first training capacity before fitting.
    pub scale_capacity: bool,
}

impl Default for SdglConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.1,
            samples: DEFAULT_SAMPLES,
            seed: 0,
            mean: MeanKind::Exponential,
            scale_capacity: false,
        }
    }
}

impl SdglConfig {
    fn lstm_seed(&self) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
    }
    fn train_seed(&self) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(2)
    }
    fn sample_seed(&self) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(3)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrendModel {
    Exponential(EmfFit),
    Zero,
    Linear { intercept: f64, slope: f64 },
}

impl TrendModel {
    pub fn fit(kind: MeanKind, cycles: &[f64], capacities: &[f64]) -> Result<Self> {
        Ok(match kind {
            MeanKind::Exponential => TrendModel::Exponential(fit_emf(cycles, capacities, None)?),
            MeanKind::Zero => TrendModel::Zero,
            MeanKind::Linear => {
                let n = cycles.len() as f64;
                let mx = cycles.iter().sum::<f64>() / n;
                let my = capacities.iter().sum::<f64>() / n;
                let sxx: f64 = cycles.iter().map(|x| (x - mx).powi(2)).sum();
                let sxy: f64 = cycles.iter().zip(capacities).map(|(x, y)| (x - mx) * (y - my)).sum();
                let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
                TrendModel::Linear { intercept: my - slope * mx, slope }
            }
        })
    }

    pub fn eval(&self, cycle: f64) -> Result<f64> {
        match self {
            TrendModel::Exponential(fit) => emf_eval(&fit.params, cycle),
            TrendModel::Zero => Ok(0.0),
            TrendModel::Linear { intercept, slope } => Ok(intercept + slope * cycle),
        }
    }

    pub fn kind(&self) -> MeanKind {
        match self {
            TrendModel::Exponential(_) => MeanKind::Exponential,
            TrendModel::Zero => MeanKind::Zero,
            TrendModel::Linear { .. } => MeanKind::Linear,
        }
    }

    pub fn emf(&self) -> Option<&EmfFit> {
        match self {
            TrendModel::Exponential(fit) => Some(fit),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdglModel {
    pub trend: TrendModel,
    pub extractor: LstmWeights,
    pub dgp: DgpModel,
    pub normalization: NormalizationStats,
    pub config: SdglConfig,
    pub loss_trace: Vec<f64>,
}

/// Prediction split into its trend and residual parts, in capacity units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdglPrediction {
    pub total: PredictionResult,
    pub trend: f64,
    pub residual: PredictionResult,
}

/// Fits the trend on the training prefix, then trains the extractor and
/// deep GP jointly on the trend's residuals. Test cycles are never read.
pub fn train_sdgl(dataset: &CellDataset, config: &SdglConfig) -> Result<SdglModel> {
    let train = dataset.train();
    let scale = if config.scale_capacity { train[0].capacity } else { 1.0 };
    let cycles: Vec<f64> = train.iter().map(|c| c.cycle_index as f64).collect();
    let capacities: Vec<f64> = train.iter().map(|c| c.capacity / scale).collect();

    let trend = TrendModel::fit(config.mean, &cycles, &capacities)?;
    let residuals: Vec<f64> =
        cycles.iter().zip(&capacities).map(|(&i, &y)| Ok(y - trend.eval(i)?)).collect::<Result<_>>()?;

    let raw: Vec<CycleProfile> = train.iter().map(|c| c.profile.clone()).collect();
    let mut normalization = fit_normalization(&raw)?;
    normalization.capacity_scale = scale;
    let profiles: Vec<CycleProfile> = raw.iter().map(|p| normalization.normalize(p)).collect();

    let extractor = lstm_init(config.lstm_seed());
    let features = feature_matrix(&extractor, &profiles)?;
    let init = DgpModel::init(&features, &residuals, config.samples, config.sample_seed())?;
    let out = train_dgp(
        &init,
        DgpInputs::Lstm { weights: &extractor, profiles: &profiles },
        &residuals,
        &DgpTrainConfig { epochs: config.epochs, lr: config.lr, seed: config.train_seed() },
    )?;
    Ok(SdglModel {
        trend,
        extractor: out.lstm.expect("lstm inputs"),
        dgp: out.model,
        normalization,
        config: config.clone(),
        loss_trace: out.loss_trace,
    })
}

impl SdglModel {
    /// Feature of a resampled, not yet normalized profile.
    pub fn features(&self, profiles: &[CycleProfile]) -> Result<Vec<FeatureVector>> {
        let normalized: Vec<CycleProfile> = profiles.iter().map(|p| self.normalization.normalize(p)).collect();
        let m = feature_matrix(&self.extractor, &normalized)?;
        Ok(m.row_iter().map(|r| FeatureVector([r[0], r[1]])).collect())
    }

    /// Predicts the capacity of cycle `cycle_index` from its profile.
    pub fn predict(&self, cycle_index: u32, profile: &CycleProfile) -> Result<SdglPrediction> {
        let f = self.features(std::slice::from_ref(profile))?[0];
        self.predict_from_feature(cycle_index, &f)
    }

    pub fn predict_from_feature(&self, cycle_index: u32, f: &FeatureVector) -> Result<SdglPrediction> {
        if cycle_index == 0 {
            return Err(Error::invalid("cycle indices start at 1"));
        }
        let s = self.normalization.capacity_scale;
        let trend = self.trend.eval(cycle_index as f64)?;
        let r = dgp_predict(&self.dgp, &f.0)?;
        let residual = PredictionResult::new(r.mean * s, r.variance * s * s);
        let trend = trend * s;
        Ok(SdglPrediction { total: residual.offset(trend), trend, residual })
    }

    pub fn to_tensors(&self) -> Result<TensorFile> {
        let mut f = TensorFile::default();
        match &self.trend {
            TrendModel::Exponential(fit) => {
                f.insert("trend.exponential", Matrix::from_row_slice(1, 3, &fit.params.as_array()));
            }
            TrendModel::Zero => f.insert("trend.zero", Matrix::zeros(1, 1)),
            TrendModel::Linear { intercept, slope } => {
                f.insert("trend.linear", Matrix::from_row_slice(1, 2, &[*intercept, *slope]));
            }
        }
        f.insert("norm.mean", Matrix::from_row_slice(1, CHANNELS, &self.normalization.mean));
        f.insert("norm.std", Matrix::from_row_slice(1, CHANNELS, &self.normalization.std));
        f.insert_scalar("norm.capacity_scale", self.normalization.capacity_scale);
        self.extractor.write_tensors(&mut f, "lstm.");
        self.dgp.write_tensors(&mut f, "dgp.")?;
        Ok(f)
    }

    /// Rebuilds a model from [`SdglModel::to_tensors`] output. The trend comes
    /// back as parameters only; residual diagnostics are not stored.
    pub fn from_tensors(f: &TensorFile, config: SdglConfig) -> Result<Self> {
        let trend = if let Ok(p) = f.get("trend.exponential") {
            let params = EmfParams::new(p[0], p[1], p[2]);
            TrendModel::Exponential(EmfFit {
                params,
                residuals: vec![],
                rms_residual: f64::NAN,
                converged: true,
                iterations: 0,
                objective_trace: vec![],
            })
        } else if let Ok(p) = f.get("trend.linear") {
            TrendModel::Linear { intercept: p[0], slope: p[1] }
        } else {
            f.get("trend.zero")?;
            TrendModel::Zero
        };
        let row3 = |name: &str| -> Result<[f64; CHANNELS]> {
            let m = f.get(name)?;
            if m.len() != CHANNELS {
                return Err(Error::Checkpoint(format!("`{name}` must have {CHANNELS} entries")));
            }
            Ok([m[0], m[1], m[2]])
        };
        let normalization = NormalizationStats {
            mean: row3("norm.mean")?,
            std: row3("norm.std")?,
            capacity_scale: f.get_scalar("norm.capacity_scale")?,
        };
        Ok(Self {
            trend,
            extractor: LstmWeights::read_tensors(f, "lstm.")?,
            dgp: DgpModel::read_tensors(f, "dgp.")?,
            normalization,
            config,
            loss_trace: vec![],
        })
    }
}

pub fn predict_sdgl(model: &SdglModel, cycle_index: u32, profile: &CycleProfile) -> Result<PredictionResult> {
    Ok(model.predict(cycle_index, profile)?.total)
}
