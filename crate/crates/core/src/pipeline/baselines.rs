//! Comparison methods scored on the same split as the main model.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Tape;
use crate::data::{fit_normalization, CellDataset, CycleProfile};
use crate::error::{Error, Result};
use crate::gp::dgp::{dgp_predict, train_dgp, DgpInputs, DgpModel, DgpTrainConfig};
use crate::gp::gpr::{gpr_fit, GpHyper};
use crate::gp::PredictionResult;
use crate::linalg::Matrix;
use crate::lstm::{forward_batch, lstm_init, LstmWeights};

use super::model::{train_sdgl, MeanKind, SdglConfig, SdglModel};
use super::report::EvalReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Sdgl,
    /// Exact GPR on cycle index with RBF plus white noise, on raw capacity.
    GprWhite,
    /// Two-layer deep GP on cycle index, on raw capacity.
    DgprIndex,
    /// LSTM features with a linear head fitted by squared error.
    LstmOnly,
    /// Full model with the trend replaced by zero.
    SdglNoEmf,
    /// Full model with a least-squares line as the trend.
    SdglLinearMean,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Sdgl,
        Method::GprWhite,
        Method::DgprIndex,
        Method::LstmOnly,
        Method::SdglNoEmf,
        Method::SdglLinearMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sdgl => "sdgl",
            Method::GprWhite => "gpr_white",
            Method::DgprIndex => "dgpr_index",
            Method::LstmOnly => "lstm_only",
            Method::SdglNoEmf => "sdgl_no_emf",
            Method::SdglLinearMean => "sdgl_linear_mean",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// Everything a method produced on one cell.
#[derive(Clone, Debug)]
pub struct MethodRun {
    pub report: EvalReport,
    /// Present for the methods built on the full model.
    pub model: Option<SdglModel>,
}

/// Trains the main model and scores it on the test window.
pub fn evaluate_sdgl(dataset: &CellDataset, config: &SdglConfig, method: &str) -> Result<(EvalReport, SdglModel)> {
    let model = train_sdgl(dataset, config)?;
    let test_profiles: Vec<CycleProfile> = dataset.test().iter().map(|c| c.profile.clone()).collect();
    let features = model.features(&test_profiles)?;
    let predictions = dataset
        .test()
        .iter()
        .zip(&features)
        .map(|(c, f)| Ok(model.predict_from_feature(c.cycle_index, f)?.total))
        .collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport::new(dataset, method, config.seed, predictions)?;
    report.trend_converged = model.trend.emf().map(|fit| fit.converged);
    Ok((report, model))
}

pub fn run_method(method: Method, dataset: &CellDataset, config: &SdglConfig) -> Result<MethodRun> {
    let with_mean = |mean: MeanKind| -> Result<MethodRun> {
        let (report, model) = evaluate_sdgl(dataset, &SdglConfig { mean, ..config.clone() }, method.name())?;
        Ok(MethodRun { report, model: Some(model) })
    };
    match method {
        Method::Sdgl => with_mean(MeanKind::Exponential),
        Method::SdglNoEmf => with_mean(MeanKind::Zero),
        Method::SdglLinearMean => with_mean(MeanKind::Linear),
        Method::GprWhite | Method::DgprIndex | Method::LstmOnly => {
            Ok(MethodRun { report: run_baseline(method, dataset, config)?, model: None })
        }
    }
}

/// Runs one comparison method. The main model's variants go through
/// [`run_method`] as well, so this accepts every [`Method`].
pub fn run_baseline(method: Method, dataset: &CellDataset, config: &SdglConfig) -> Result<EvalReport> {
    let predictions = match method {
        Method::GprWhite => gpr_white(dataset, config)?,
        Method::DgprIndex => dgpr_index(dataset, config)?,
        Method::LstmOnly => lstm_only(dataset, config)?,
        _ => return Ok(run_method(method, dataset, config)?.report),
    };
    EvalReport::new(dataset, method.name(), config.seed, predictions)
}

fn index_inputs(dataset: &CellDataset) -> (Matrix, Matrix) {
    let train = dataset.train();
    let x = Matrix::from_iterator(train.len(), 1, train.iter().map(|c| c.cycle_index as f64));
    let y = Matrix::from_iterator(train.len(), 1, train.iter().map(|c| c.capacity));
    (x, y)
}

fn gpr_white(dataset: &CellDataset, config: &SdglConfig) -> Result<Vec<PredictionResult>> {
    let (x, y) = index_inputs(dataset);
    let init = GpHyper::from_data(&x, &y)?;
    let fit = gpr_fit(&x, &y, init, config.epochs, config.lr)?;
    dataset.test().iter().map(|c| Ok(fit.layer.predict(&[c.cycle_index as f64])?.observed(0))).collect()
}

fn dgpr_index(dataset: &CellDataset, config: &SdglConfig) -> Result<Vec<PredictionResult>> {
    let (x, y) = index_inputs(dataset);
    let targets: Vec<f64> = y.iter().copied().collect();
    let init = DgpModel::init(&x, &targets, config.samples, config.seed)?;
    let out = train_dgp(
        &init,
        DgpInputs::Fixed(&x),
        &targets,
        &DgpTrainConfig { epochs: config.epochs, lr: config.lr, seed: config.seed },
    )?;
    dataset.test().iter().map(|c| dgp_predict(&out.model, &[c.cycle_index as f64])).collect()
}

/// Linear head `capacity ≈ f·w + b` on the extractor's features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    pub weights: Matrix,
    pub bias: f64,
}

impl LinearHead {
    /// Least-squares head for fixed features, with a small ridge term.
    pub fn least_squares(features: &Matrix, targets: &[f64]) -> Result<Self> {
        let n = features.nrows();
        let mut design = Matrix::from_element(n, features.ncols() + 1, 1.0);
        design.view_mut((0, 0), (n, features.ncols())).copy_from(features);
        let y = Matrix::from_column_slice(n, 1, targets);
        let mut gram = design.transpose() * &design;
        for i in 0..gram.nrows() {
            gram[(i, i)] += 1e-8 * (1.0 + gram[(i, i)]);
        }
        let rhs = design.transpose() * y;
        let sol = crate::linalg::cholesky_jittered(&gram)?.solve(&rhs);
        let d = features.ncols();
        Ok(Self { weights: sol.rows(0, d).into_owned(), bias: sol[(d, 0)] })
    }
}

fn lstm_only(dataset: &CellDataset, config: &SdglConfig) -> Result<Vec<PredictionResult>> {
    let train = dataset.train();
    let raw: Vec<CycleProfile> = train.iter().map(|c| c.profile.clone()).collect();
    let norm = fit_normalization(&raw)?;
    let profiles: Vec<CycleProfile> = raw.iter().map(|p| norm.normalize(p)).collect();
    let targets: Vec<f64> = train.iter().map(|c| c.capacity).collect();
    let weights = lstm_init(config.seed.wrapping_add(0x51ed));
    let (weights, head, train_mse) = fit_lstm_head(&weights, &profiles, &targets, config.epochs, config.lr)?;

    let test: Vec<CycleProfile> = dataset.test().iter().map(|c| norm.normalize(&c.profile)).collect();
    let f = crate::lstm::feature_matrix(&weights, &test)?;
    let pred = f * &head.weights;
    Ok(pred.iter().map(|m| PredictionResult::new(m + head.bias, train_mse)).collect())
}

/// Squared-error gradient descent on extractor and head together, starting
/// from the least-squares head. Returns the training MSE as the predictive
/// variance.
pub fn fit_lstm_head(
    init: &LstmWeights,
    profiles: &[CycleProfile],
    targets: &[f64],
    epochs: usize,
    lr: f64,
) -> Result<(LstmWeights, LinearHead, f64)> {
    let n = targets.len();
    let y = Matrix::from_column_slice(n, 1, targets);
    let refs: Vec<&CycleProfile> = profiles.iter().collect();
    let loss = |w: &LstmWeights, head: &LinearHead, with_grad: bool| -> Result<(f64, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let vars = w.to_tape(&mut tape, with_grad)?;
        let hw = tape.leaf(head.weights.clone(), with_grad)?;
        let hb = tape.leaf(Matrix::from_element(1, 1, head.bias), with_grad)?;
        let f = forward_batch(&mut tape, &vars, &refs)?;
        let p = tape.matmul(f, hw)?;
        let p = tape.add(p, hb)?;
        let yv = tape.constant(y.clone())?;
        let e = tape.sub(p, yv)?;
        let s = tape.sum_squares(e)?;
        let l = tape.scale(s, 1.0 / n as f64)?;
        let value = tape.scalar_value(l);
        if !with_grad {
            return Ok((value, vec![]));
        }
        tape.backward(l)?;
        let mut g = vars.grads(&tape);
        g.push(tape.grad(hw));
        g.push(tape.grad(hb));
        Ok((value, g))
    };

    let mut w = init.clone();
    let mut head = LinearHead::least_squares(&crate::lstm::feature_matrix(&w, profiles)?, targets)?;
    let (mut current, _) = loss(&w, &head, false)?;
    for _ in 0..epochs {
        let (_, g) = loss(&w, &head, true)?;
        let mut step = lr;
        for _ in 0..crate::gp::dgp::MAX_REJECTIONS {
            let mut cw = w.clone();
            for (t, gt) in cw.tensors_mut().into_iter().zip(&g) {
                *t -= gt * step;
            }
            let k = g.len();
            let ch = LinearHead { weights: &head.weights - &g[k - 2] * step, bias: head.bias - g[k - 1][0] * step };
            if let Ok((v, _)) = loss(&cw, &ch, false) {
                if v.is_finite() && v <= current {
                    w = cw;
                    head = ch;
                    current = v;
                    break;
                }
            }
            step *= 0.5;
        }
    }
    Ok((w, head, current))
}
