//! Python bindings: synthetic and CSV cells, the exponential trend fit,
//! training and prediction, checkpoints, and the scoring metrics.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sdgl::checkpoint::TensorFile;
use sdgl::data::{generate_synthetic_cell, parse_cell_csv, CellDataset, CycleProfile, SyntheticSpec};
use sdgl::emf::EmfParams;
use sdgl::gp::PredictionResult;
use sdgl::pipeline::{self, MeanKind, Method, SdglConfig, SdglModel};
use sdgl::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::TrainingAborted(_) | Error::NonFinite(_) | Error::NotPositiveDefinite { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// One cell: chronologically ordered cycles split into a training prefix and
/// a test window.
#[pyclass(name = "Cell", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCell {
    inner: CellDataset,
}

#[pymethods]
impl PyCell {
    /// Reads a cell CSV (`cycle,step,voltage,current,temperature,capacity`).
    #[staticmethod]
    fn from_csv(path: &str, n_train: usize) -> PyResult<Self> {
        let raw = parse_cell_csv(path).map_err(to_py)?;
        let id = std::path::Path::new(path).file_stem().map_or("cell".into(), |s| s.to_string_lossy().into_owned());
        Ok(Self { inner: CellDataset::from_raw(id, &raw, n_train).map_err(to_py)? })
    }

    #[getter]
    fn cell_id(&self) -> String {
        self.inner.cell_id.clone()
    }

    #[getter]
    fn n_train(&self) -> usize {
        self.inner.n_train()
    }

    #[getter]
    fn n_test(&self) -> usize {
        self.inner.n_test()
    }

    fn cycle_indices(&self) -> Vec<u32> {
        self.inner.cycles().iter().map(|c| c.cycle_index).collect()
    }

    fn capacities(&self) -> Vec<f64> {
        self.inner.cycles().iter().map(|c| c.capacity).collect()
    }

    /// The same cycles with a different training prefix length.
    fn with_n_train(&self, n_train: usize) -> PyResult<Self> {
        Ok(Self { inner: self.inner.with_n_train(n_train).map_err(to_py)? })
    }

    fn __len__(&self) -> usize {
        self.inner.n_total()
    }

    fn __repr__(&self) -> String {
        format!("Cell({:?}, cycles={}, n_train={})", self.inner.cell_id, self.inner.n_total(), self.inner.n_train())
    }
}

/// Generates a synthetic cell with an exponential trend, a period-40
/// sinusoidal residual and Gaussian capacity noise.
#[pyfunction]
#[pyo3(signature = (seed=0, cycles=168, n_train=125, theta=(2.0, -0.15, 0.012), residual_amplitude=0.02, noise_std=0.01))]
fn synthetic_cell(
    seed: u64,
    cycles: usize,
    n_train: usize,
    theta: (f64, f64, f64),
    residual_amplitude: f64,
    noise_std: f64,
) -> PyResult<PyCell> {
    let spec = SyntheticSpec {
        seed,
        n_cycles: cycles,
        n_train,
        theta: EmfParams::new(theta.0, theta.1, theta.2),
        residual_amplitude,
        noise_std,
        ..Default::default()
    };
    Ok(PyCell { inner: generate_synthetic_cell(&spec).map_err(to_py)? })
}

/// Result of the exponential trend fit.
#[pyclass(name = "EmfFit", frozen, get_all)]
struct PyEmfFit {
    theta: (f64, f64, f64),
    rms_residual: f64,
    converged: bool,
    iterations: usize,
    residuals: Vec<f64>,
}

/// Fits `theta1 + theta2 * exp(theta3 * cycle)` by Levenberg-Marquardt.
#[pyfunction]
#[pyo3(signature = (cycles, capacities, init=None))]
fn fit_emf(cycles: Vec<f64>, capacities: Vec<f64>, init: Option<(f64, f64, f64)>) -> PyResult<PyEmfFit> {
    let init = init.map(|(a, b, c)| EmfParams::new(a, b, c));
    let fit = sdgl::emf::fit_emf(&cycles, &capacities, init).map_err(to_py)?;
    let [a, b, c] = fit.params.as_array();
    Ok(PyEmfFit {
        theta: (a, b, c),
        rms_residual: fit.rms_residual,
        converged: fit.converged,
        iterations: fit.iterations,
        residuals: fit.residuals,
    })
}

#[pyfunction]
fn emf_eval(theta: (f64, f64, f64), cycle: f64) -> PyResult<f64> {
    sdgl::emf::emf_eval(&EmfParams::new(theta.0, theta.1, theta.2), cycle).map_err(to_py)
}

fn parse_mean(mean: &str) -> PyResult<MeanKind> {
    match mean {
        "exponential" => Ok(MeanKind::Exponential),
        "zero" => Ok(MeanKind::Zero),
        "linear" => Ok(MeanKind::Linear),
        other => Err(PyValueError::new_err(format!("unknown mean `{other}`"))),
    }
}

fn config(epochs: usize, lr: f64, samples: usize, seed: u64, mean: &str) -> PyResult<SdglConfig> {
    Ok(SdglConfig { epochs, lr, samples, seed, mean: parse_mean(mean)?, ..Default::default() })
}

fn prediction_dict(p: &PredictionResult) -> (f64, f64, f64, f64) {
    (p.mean, p.variance, p.lower2s, p.upper2s)
}

/// A trained model: trend, LSTM extractor and two-layer deep GP.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: SdglModel,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn loss_trace(&self) -> Vec<f64> {
        self.inner.loss_trace.clone()
    }

    /// Trend parameters, or `None` for the zero and linear trends.
    #[getter]
    fn theta(&self) -> Option<(f64, f64, f64)> {
        self.inner.trend.emf().map(|f| {
            let [a, b, c] = f.params.as_array();
            (a, b, c)
        })
    }

    /// `(mean, variance, lower2s, upper2s)` for every test cycle of `cell`.
    fn predict_test(&self, py: Python<'_>, cell: &PyCell) -> PyResult<Vec<(f64, f64, f64, f64)>> {
        let cell = &cell.inner;
        py.detach(|| {
            let profiles: Vec<CycleProfile> = cell.test().iter().map(|c| c.profile.clone()).collect();
            let feats = self.inner.features(&profiles)?;
            cell.test()
                .iter()
                .zip(&feats)
                .map(|(c, f)| Ok(prediction_dict(&self.inner.predict_from_feature(c.cycle_index, f)?.total)))
                .collect::<sdgl::Result<Vec<_>>>()
        })
        .map_err(to_py)
    }

    /// Two-dimensional extractor features for every cycle of `cell`.
    fn features(&self, cell: &PyCell) -> PyResult<Vec<(f64, f64)>> {
        let profiles: Vec<CycleProfile> = cell.inner.cycles().iter().map(|c| c.profile.clone()).collect();
        Ok(self.inner.features(&profiles).map_err(to_py)?.iter().map(|f| (f.0[0], f.0[1])).collect())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.to_tensors().and_then(|t| t.save(path)).map_err(to_py)
    }

    /// Reads a checkpoint written by `save`. Sample count and sampling seed
    /// come from the file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = TensorFile::load(path).map_err(to_py)?;
        let mut inner = SdglModel::from_tensors(&file, SdglConfig::default()).map_err(to_py)?;
        inner.config.samples = inner.dgp.samples;
        Ok(Self { inner })
    }
}

/// Trains the full model on the cell's training prefix.
#[pyfunction]
#[pyo3(signature = (cell, epochs=200, lr=0.1, samples=100, seed=0, mean="exponential"))]
fn train(
    py: Python<'_>,
    cell: &PyCell,
    epochs: usize,
    lr: f64,
    samples: usize,
    seed: u64,
    mean: &str,
) -> PyResult<PyModel> {
    let cfg = config(epochs, lr, samples, seed, mean)?;
    let data = &cell.inner;
    let inner = py.detach(|| pipeline::train_sdgl(data, &cfg)).map_err(to_py)?;
    Ok(PyModel { inner })
}

/// Test-window scores of one method.
#[pyclass(name = "Report", frozen, get_all)]
struct PyReport {
    cell: String,
    method: String,
    seed: u64,
    cycles: Vec<u32>,
    truths: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    mse: f64,
    r2: f64,
    coverage: f64,
}

/// Trains and scores `method` (`sdgl`, `gpr_white`, `dgpr_index`,
/// `lstm_only`, `sdgl_no_emf`, `sdgl_linear_mean`) on the cell.
#[pyfunction]
#[pyo3(signature = (method, cell, epochs=200, lr=0.1, samples=100, seed=0))]
fn run_method(
    py: Python<'_>,
    method: &str,
    cell: &PyCell,
    epochs: usize,
    lr: f64,
    samples: usize,
    seed: u64,
) -> PyResult<PyReport> {
    let method: Method = method.parse().map_err(to_py)?;
    let cfg = config(epochs, lr, samples, seed, "exponential")?;
    let data = &cell.inner;
    let r = py.detach(|| pipeline::run_method(method, data, &cfg)).map_err(to_py)?.report;
    Ok(PyReport {
        cell: r.cell,
        method: r.method,
        seed: r.seed,
        cycles: r.cycles,
        means: r.predictions.iter().map(|p| p.mean).collect(),
        variances: r.predictions.iter().map(|p| p.variance).collect(),
        truths: r.truths,
        mse: r.mse,
        r2: r.r2,
        coverage: r.coverage,
    })
}

#[pyfunction]
fn mse(predicted: Vec<f64>, actual: Vec<f64>) -> PyResult<f64> {
    pipeline::mse(&predicted, &actual).map_err(to_py)
}

#[pyfunction]
fn r2(predicted: Vec<f64>, actual: Vec<f64>) -> PyResult<f64> {
    pipeline::r2(&predicted, &actual).map_err(to_py)
}

/// Fraction of `actual` inside `mean ± 2·sqrt(variance)`.
#[pyfunction]
fn coverage2sigma(means: Vec<f64>, variances: Vec<f64>, actual: Vec<f64>) -> PyResult<f64> {
    if means.len() != variances.len() {
        return Err(PyValueError::new_err("means and variances differ in length"));
    }
    let preds: Vec<PredictionResult> =
        means.iter().zip(&variances).map(|(&m, &v)| PredictionResult::new(m, v)).collect();
    pipeline::coverage2sigma(&preds, &actual).map_err(to_py)
}

#[pymodule]
fn sdgl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCell>()?;
    m.add_class::<PyEmfFit>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(synthetic_cell, m)?)?;
    m.add_function(wrap_pyfunction!(fit_emf, m)?)?;
    m.add_function(wrap_pyfunction!(emf_eval, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_method, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(r2, m)?)?;
    m.add_function(wrap_pyfunction!(coverage2sigma, m)?)?;
    Ok(())
}
