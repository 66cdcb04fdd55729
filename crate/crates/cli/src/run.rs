//! `run`: train every configured method on every cell and write artifacts.
//!
//! Layout under the output directory:
//!
//! ```text
//! summary.csv                     one row per (cell, method)
//! <cell>/predictions_<method>.csv test-window predictions
//! <cell>/model_<method>.tensors   checkpoint, for methods built on the full model
//! <cell>/trend.csv                fitted trend parameters per such method
//! <cell>/features.csv             cycle, f1, f2 for every cycle
//! <cell>/plot.svg                 measured capacity, means and 2σ band
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sdgl::data::{generate_synthetic_cell, parse_cell_csv, CellDataset, CycleProfile};
use sdgl::pipeline::{run_method, write_summary, EvalReport, Method, MethodRun, SdglModel, TrendModel};
use sdgl::Error;

use crate::config::ExperimentConfig;
use crate::plot::render_svg;
use crate::CliError;

#[derive(Debug)]
pub struct RunOutcome {
    pub reports: Vec<EvalReport>,
    pub artifacts: Vec<PathBuf>,
}

fn training_error(cell: &str, method: Method, e: Error) -> CliError {
    CliError::Training(format!("{cell}/{method}: {e}"))
}

/// Loads the configured cells, in config order with the synthetic cell last.
pub fn load_cells(config: &ExperimentConfig) -> Result<Vec<CellDataset>, CliError> {
    let mut cells = Vec::new();
    for path in &config.cells {
        let raw = parse_cell_csv(path).map_err(|e| CliError::Config(format!("cells: {}: {e}", path.display())))?;
        let id = path.file_stem().map_or("cell".into(), |s| s.to_string_lossy().into_owned());
        if config.n_train >= raw.len() {
            return Err(CliError::Config(format!(
                "n_train: must be less than the {} cycles of {}, got {}",
                raw.len(),
                path.display(),
                config.n_train
            )));
        }
        cells.push(
            CellDataset::from_raw(id, &raw, config.n_train).map_err(|e| CliError::Config(format!("cells: {e}")))?,
        );
    }
    if let Some(spec) = &config.synthetic {
        cells.push(generate_synthetic_cell(spec).map_err(|e| CliError::Config(format!("synthetic: {e}")))?);
    }
    let mut ids: Vec<String> = cells.iter().map(|c| dir_name(&c.cell_id)).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Config(format!("cells: two cells share the id `{}`", w[0])));
    }
    Ok(cells)
}

fn dir_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn create(path: &Path, artifacts: &mut Vec<PathBuf>) -> Result<BufWriter<File>, CliError> {
    artifacts.push(path.to_path_buf());
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_err(e: Error) -> CliError {
    match e {
        Error::Io(io) => CliError::Io(io),
        other => CliError::Io(std::io::Error::other(other.to_string())),
    }
}

fn run_cell(
    config: &ExperimentConfig,
    cell: &CellDataset,
    log: &(dyn Fn(String) + Sync),
) -> Result<(Vec<EvalReport>, Vec<PathBuf>), CliError> {
    let dir = config.output_dir.join(dir_name(&cell.cell_id));
    std::fs::create_dir_all(&dir)?;
    let sdgl_config = config.sdgl_config();
    let mut runs: Vec<MethodRun> = Vec::new();
    for &method in &config.methods {
        let run = run_method(method, cell, &sdgl_config).map_err(|e| training_error(&cell.cell_id, method, e))?;
        if !run.report.is_finite() {
            return Err(training_error(&cell.cell_id, method, Error::NonFinite("test predictions".into())));
        }
        log(format!(
            "{} {:<16} mse {:.4e}  r2 {:.4}  coverage {:.3}",
            cell.cell_id, run.report.method, run.report.mse, run.report.r2, run.report.coverage
        ));
        runs.push(run);
    }

    let mut artifacts = Vec::new();
    for run in &runs {
        let r = &run.report;
        let w = create(&dir.join(format!("predictions_{}.csv", r.method)), &mut artifacts)?;
        r.write_predictions(w, true).map_err(csv_err)?;
        if let Some(model) = &run.model {
            let path = dir.join(format!("model_{}.tensors", r.method));
            model.to_tensors().and_then(|t| t.save(&path)).map_err(csv_err)?;
            artifacts.push(path);
        }
    }

    let models: Vec<(&str, &SdglModel)> =
        runs.iter().filter_map(|r| r.model.as_ref().map(|m| (r.report.method.as_str(), m))).collect();
    if !models.is_empty() {
        let mut w = create(&dir.join("trend.csv"), &mut artifacts)?;
        writeln!(w, "method,kind,theta1,theta2,theta3,converged")?;
        for (name, m) in &models {
            match &m.trend {
                TrendModel::Exponential(fit) => {
                    let [a, b, c] = fit.params.as_array();
                    writeln!(w, "{name},exponential,{a},{b},{c},{}", fit.converged)?;
                    log(format!("{} {name} trend theta = ({a:.6}, {b:.6}, {c:.6})", cell.cell_id));
                }
                TrendModel::Linear { intercept, slope } => writeln!(w, "{name},linear,{intercept},{slope},,true")?,
                TrendModel::Zero => writeln!(w, "{name},zero,,,,true")?,
            }
        }
        w.flush()?;

        // Features come from the first model in method order.
        let model = models[0].1;
        let profiles: Vec<CycleProfile> = cell.cycles().iter().map(|c| c.profile.clone()).collect();
        let features = model.features(&profiles).map_err(|e| CliError::Training(e.to_string()))?;
        let mut w = create(&dir.join("features.csv"), &mut artifacts)?;
        writeln!(w, "cycle,f1,f2")?;
        for (c, f) in cell.cycles().iter().zip(&features) {
            writeln!(w, "{},{},{}", c.cycle_index, f.0[0], f.0[1])?;
        }
        w.flush()?;
    }

    let reports: Vec<EvalReport> = runs.into_iter().map(|r| r.report).collect();
    let refs: Vec<&EvalReport> = reports.iter().collect();
    let mut w = create(&dir.join("plot.svg"), &mut artifacts)?;
    w.write_all(render_svg(cell, &refs).as_bytes())?;
    w.flush()?;
    Ok((reports, artifacts))
}

/// Runs the whole experiment. `log` receives one progress line per event.
pub fn cmd_run(config: &ExperimentConfig, log: &(dyn Fn(String) + Sync)) -> Result<RunOutcome, CliError> {
    let cells = load_cells(config)?;
    std::fs::create_dir_all(&config.output_dir)?;
    let results: Vec<Result<(Vec<EvalReport>, Vec<PathBuf>), CliError>> = if config.parallel && cells.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = cells.iter().map(|c| s.spawn(|| run_cell(config, c, log))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Training("worker thread panicked".into()))))
                .collect()
        })
    } else {
        cells.iter().map(|c| run_cell(config, c, log)).collect()
    };

    let mut outcome = RunOutcome { reports: vec![], artifacts: vec![] };
    for r in results {
        let (reports, artifacts) = r?;
        outcome.reports.extend(reports);
        outcome.artifacts.extend(artifacts);
    }
    let path = config.output_dir.join("summary.csv");
    write_summary(BufWriter::new(File::create(&path)?), &outcome.reports).map_err(csv_err)?;
    outcome.artifacts.push(path);
    Ok(outcome)
}
