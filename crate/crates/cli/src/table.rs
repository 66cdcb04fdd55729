//! `table`: merge summary CSVs into a methods × cells table of MSE and R².
//!
//! Every `.csv` under the directory whose header is the summary header is
//! read; other CSVs are skipped. Rows for the same method and cell (several
//! seeds) are averaged. The final column pair is the mean over the cells a
//! method has values for.

use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use sdgl::pipeline::{read_summary, SummaryRow, SUMMARY_HEADER};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryTable {
    pub cells: Vec<String>,
    pub methods: Vec<String>,
    /// `values[m][c]` is `(mse, r2)`, or `None` when the method never ran on the cell.
    pub values: Vec<Vec<Option<(f64, f64)>>>,
}

impl SummaryTable {
    pub fn from_rows(rows: &[SummaryRow]) -> Self {
        let mut cells: Vec<String> = Vec::new();
        let mut methods: Vec<String> = Vec::new();
        for r in rows {
            if !cells.contains(&r.cell) {
                cells.push(r.cell.clone());
            }
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
        }
        let values = methods
            .iter()
            .map(|m| {
                cells
                    .iter()
                    .map(|c| {
                        let hits: Vec<&SummaryRow> = rows.iter().filter(|r| &r.method == m && &r.cell == c).collect();
                        (!hits.is_empty()).then(|| {
                            let n = hits.len() as f64;
                            (hits.iter().map(|r| r.mse).sum::<f64>() / n, hits.iter().map(|r| r.r2).sum::<f64>() / n)
                        })
                    })
                    .collect()
            })
            .collect();
        Self { cells, methods, values }
    }

    /// Mean MSE and R² over the cells present for method `m`.
    pub fn average(&self, m: usize) -> Option<(f64, f64)> {
        let present: Vec<(f64, f64)> = self.values[m].iter().flatten().copied().collect();
        if present.is_empty() {
            return None;
        }
        let n = present.len() as f64;
        Some((present.iter().map(|v| v.0).sum::<f64>() / n, present.iter().map(|v| v.1).sum::<f64>() / n))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method");
        for c in self.cells.iter().map(String::as_str).chain(["Avg."]) {
            let _ = write!(s, ",{c} mse,{c} r2");
        }
        s.push('\n');
        for (m, name) in self.methods.iter().enumerate() {
            s.push_str(name);
            for v in self.values[m].iter().copied().chain([self.average(m)]) {
                match v {
                    Some((mse, r2)) => {
                        let _ = write!(s, ",{mse},{r2}");
                    }
                    None => s.push_str(",,"),
                }
            }
            s.push('\n');
        }
        s
    }

    /// Fixed-width text rendering for the terminal.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<18}", "method");
        for c in self.cells.iter().map(String::as_str).chain(["Avg."]) {
            let _ = write!(s, " {:>22}", format!("{c} MSE / R2"));
        }
        s.push('\n');
        for (m, name) in self.methods.iter().enumerate() {
            let _ = write!(s, "{name:<18}");
            for v in self.values[m].iter().copied().chain([self.average(m)]) {
                let cell = v.map_or("-".to_string(), |(mse, r2)| format!("{mse:.5} / {r2:.4}"));
                let _ = write!(s, " {cell:>22}");
            }
            s.push('\n');
        }
        s
    }
}

fn summary_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            summary_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "csv") {
            let head = std::fs::read_to_string(&path)?;
            if head.lines().next().is_some_and(|l| l.trim() == SUMMARY_HEADER.join(",")) {
                out.push(path);
            }
        }
    }
    Ok(())
}

/// Builds the table from every summary under `dir` and writes `table.csv`
/// next to them.
pub fn cmd_table(dir: &Path) -> Result<(SummaryTable, PathBuf), CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    let mut files = Vec::new();
    summary_files(dir, &mut files)?;
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(read_summary(File::open(f)?).map_err(|e| CliError::Usage(format!("{}: {e}", f.display())))?);
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("no summary rows found under {}", dir.display())));
    }
    let table = SummaryTable::from_rows(&rows);
    let out = dir.join("table.csv");
    std::fs::write(&out, table.to_csv())?;
    Ok((table, out))
}
