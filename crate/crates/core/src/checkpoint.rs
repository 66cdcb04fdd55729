//! Named-tensor text container used for model checkpoints.
//!
//! ```text
//! sdgl-tensors v1
//! tensor <name> <rows> <cols>
//! <row 0 values, space separated>
//! ...
//! ```
//!
//! Names contain no whitespace. Values use Rust's shortest round-trip float
//! formatting, so write then read is lossless. Entries keep insertion order.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &str = "sdgl-tensors";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    entries: Vec<(String, Matrix)>,
}

impl TensorFile {
    /// Inserts or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let name = name.into();
        assert!(!name.is_empty() && !name.contains(char::is_whitespace), "bad tensor name `{name}`");
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn insert_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.insert(name, Matrix::from_element(1, 1, value));
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn get_scalar(&self, name: &str) -> Result<f64> {
        let m = self.get(name)?;
        if m.shape() != (1, 1) {
            return Err(Error::Checkpoint(format!("`{name}` is not a scalar")));
        }
        Ok(m[(0, 0)])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, msg: String| Error::Parse { line: line + 1, msg };
        match lines.next() {
            Some((_, header)) if header.trim() == format!("{MAGIC} v{VERSION}") => {}
            Some((n, header)) => {
                return Err(bad(n, format!("unsupported header `{header}`")));
            }
            None => return Err(bad(0, "empty checkpoint".into())),
        }
        let mut file = TensorFile::default();
        while let Some((n, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (name, rows, cols) = match parts.as_slice() {
                ["tensor", name, r, c] => {
                    let r: usize = r.parse().map_err(|_| bad(n, format!("bad row count `{r}`")))?;
                    let c: usize = c.parse().map_err(|_| bad(n, format!("bad column count `{c}`")))?;
                    (name.to_string(), r, c)
                }
                _ => return Err(bad(n, format!("expected tensor header, got `{line}`"))),
            };
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (rn, row) = lines.next().ok_or_else(|| bad(n, format!("`{name}` truncated")))?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|_| bad(rn, format!("bad value `{tok}`")))?);
                }
                if data.len() - before != cols {
                    return Err(bad(rn, format!("`{name}` row has {} values, expected {cols}", data.len() - before)));
                }
            }
            file.entries.push((name, Matrix::from_row_slice(rows, cols, &data)));
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl fmt::Display for TensorFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{MAGIC} v{VERSION}")?;
        for (name, m) in &self.entries {
            writeln!(f, "tensor {name} {} {}", m.nrows(), m.ncols())?;
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
                writeln!(f, "{}", row.join(" "))?;
            }
        }
        Ok(())
    }
}
