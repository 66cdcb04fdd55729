use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use sdgl::data::{generate_synthetic_raw, write_cell_csv, SyntheticSpec};

use crate::CliError;

/// Writes a synthetic cell in the cell CSV schema.
pub fn cmd_synth(spec: &SyntheticSpec, out: &Path) -> Result<PathBuf, CliError> {
    let raw = generate_synthetic_raw(spec).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = BufWriter::new(File::create(out)?);
    write_cell_csv(file, &raw).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(out.to_path_buf())
}
