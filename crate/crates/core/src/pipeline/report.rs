use std::io::Write;

use crate::data::CellDataset;
use crate::error::{Error, Result};
use crate::gp::PredictionResult;

use super::metrics::{coverage2sigma, mse, r2};

pub const PREDICTION_HEADER: [&str; 9] =
    ["cell", "method", "seed", "cycle", "truth", "pred_mean", "pred_var", "lower2s", "upper2s"];
pub const SUMMARY_HEADER: [&str; 6] = ["cell", "method", "seed", "mse", "r2", "coverage"];

/// Test-window predictions of one method on one cell, with their metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub cell: String,
    pub method: String,
    pub seed: u64,
    pub cycles: Vec<u32>,
    pub truths: Vec<f64>,
    pub predictions: Vec<PredictionResult>,
    pub mse: f64,
    pub r2: f64,
    pub coverage: f64,
    /// Set when the exponential trend fit stopped without converging.
    pub trend_converged: Option<bool>,
}

impl EvalReport {
    /// Scores `predictions` against the dataset's test window.
    pub fn new(
        dataset: &CellDataset,
        method: impl Into<String>,
        seed: u64,
        predictions: Vec<PredictionResult>,
    ) -> Result<Self> {
        let test = dataset.test();
        if predictions.len() != test.len() {
            return Err(Error::invalid(format!("{} predictions for {} test cycles", predictions.len(), test.len())));
        }
        let truths: Vec<f64> = test.iter().map(|c| c.capacity).collect();
        let means: Vec<f64> = predictions.iter().map(|p| p.mean).collect();
        Ok(Self {
            cell: dataset.cell_id.clone(),
            method: method.into(),
            seed,
            cycles: test.iter().map(|c| c.cycle_index).collect(),
            mse: mse(&means, &truths)?,
            r2: r2(&means, &truths)?,
            coverage: coverage2sigma(&predictions, &truths)?,
            truths,
            predictions,
            trend_converged: None,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.mse.is_finite()
            && self.r2.is_finite()
            && self.coverage.is_finite()
            && self.predictions.iter().all(|p| p.mean.is_finite() && p.variance.is_finite())
    }

    pub fn write_predictions<W: Write>(&self, writer: W, header: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if header {
            w.write_record(PREDICTION_HEADER)?;
        }
        for ((cycle, truth), p) in self.cycles.iter().zip(&self.truths).zip(&self.predictions) {
            w.write_record([
                self.cell.clone(),
                self.method.clone(),
                self.seed.to_string(),
                cycle.to_string(),
                truth.to_string(),
                p.mean.to_string(),
                p.variance.to_string(),
                p.lower2s.to_string(),
                p.upper2s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    fn summary_record(&self) -> [String; 6] {
        [
            self.cell.clone(),
            self.method.clone(),
            self.seed.to_string(),
            self.mse.to_string(),
            self.r2.to_string(),
            self.coverage.to_string(),
        ]
    }
}

pub fn write_summary<W: Write>(writer: W, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for r in reports {
        w.write_record(r.summary_record())?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a summary CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub cell: String,
    pub method: String,
    pub seed: u64,
    pub mse: f64,
    pub r2: f64,
    pub coverage: f64,
}

pub fn read_summary<R: std::io::Read>(reader: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.iter().ne(SUMMARY_HEADER) {
        return Err(Error::Parse { line: 1, msg: format!("expected header {}", SUMMARY_HEADER.join(",")) });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("bad {} `{}`", SUMMARY_HEADER[k], &rec[k]) })
        };
        rows.push(SummaryRow {
            cell: rec[0].to_string(),
            method: rec[1].to_string(),
            seed: rec[2].trim().parse().map_err(|_| Error::Parse { line, msg: format!("bad seed `{}`", &rec[2]) })?,
            mse: num(3)?,
            r2: num(4)?,
            coverage: num(5)?,
        });
    }
    Ok(rows)
}
