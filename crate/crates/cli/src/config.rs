//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `cells` | none | comma-separated cell CSV paths, relative to the config file |
//! | `synthetic` | `false` | also run a generated cell |
//! | `synthetic.cycles` | 168 | generated cycle count |
//! | `synthetic.seed` | 0 | generator seed |
//! | `synthetic.theta1`, `.theta2`, `.theta3` | 2.0, -0.15, 0.012 | trend parameters |
//! | `synthetic.residual_amplitude` | 0.02 | sinusoid amplitude (Ah) |
//! | `synthetic.noise_std` | 0.01 | capacity noise (Ah) |
//! | `n_train` | 125 | training prefix length, applied to every cell |
//! | `epochs` | 200 | training epochs |
//! | `lr` | 0.1 | learning rate |
//! | `samples` | 100 | Monte Carlo draws per prediction |
//! | `seed` | 0 | training seed |
//! | `methods` | `sdgl,gpr_white,dgpr_index,lstm_only,sdgl_no_emf` | methods to run |
//! | `output_dir` | `output` | artifact directory, relative to the config file |
//! | `parallel` | `false` | train cells on separate threads |
//!
//! The `SDGL_OUTPUT_DIR` environment variable overrides `output_dir`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sdgl::data::SyntheticSpec;
use sdgl::emf::EmfParams;
use sdgl::pipeline::{Method, SdglConfig};

use crate::CliError;

pub const OUTPUT_DIR_ENV: &str = "SDGL_OUTPUT_DIR";

pub const DEFAULT_METHODS: [Method; 5] =
    [Method::Sdgl, Method::GprWhite, Method::DgprIndex, Method::LstmOnly, Method::SdglNoEmf];

const KEYS: [&str; 18] = [
    "cells",
    "synthetic",
    "synthetic.cycles",
    "synthetic.seed",
    "synthetic.theta1",
    "synthetic.theta2",
    "synthetic.theta3",
    "synthetic.residual_amplitude",
    "synthetic.noise_std",
    "n_train",
    "epochs",
    "lr",
    "samples",
    "seed",
    "methods",
    "output_dir",
    "parallel",
    "name",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub cells: Vec<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub n_train: usize,
    pub epochs: usize,
    pub lr: f64,
    pub samples: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            cells: vec![],
            synthetic: None,
            n_train: 125,
            epochs: 200,
            lr: 0.1,
            samples: 100,
            seed: 0,
            methods: DEFAULT_METHODS.to_vec(),
            output_dir: PathBuf::from("output"),
            parallel: false,
        }
    }
}

impl ExperimentConfig {
    pub fn sdgl_config(&self) -> SdglConfig {
        SdglConfig { epochs: self.epochs, lr: self.lr, samples: self.samples, seed: self.seed, ..Default::default() }
    }

    /// Reads a config file. Relative paths inside resolve against its
    /// directory; `SDGL_OUTPUT_DIR` wins over `output_dir`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut config = Self::parse(&text, base)?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            config.output_dir = PathBuf::from(dir);
        }
        Ok(config)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut values: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(CliError::Config(format!("line {}: unknown key `{key}`", i + 1)));
            }
            if values.insert(key, (i + 1, value.trim())).is_some() {
                return Err(CliError::Config(format!("line {}: `{key}` given twice", i + 1)));
            }
        }

        fn get<T: FromStr>(values: &BTreeMap<&str, (usize, &str)>, key: &str, default: T) -> Result<T, CliError> {
            match values.get(key) {
                None => Ok(default),
                Some((line, v)) => {
                    v.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse `{v}` (line {line})")))
                }
            }
        }

        let d = Self::default();
        let mut config = Self {
            cells: match values.get("cells") {
                Some((_, v)) => v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| base.join(s)).collect(),
                None => vec![],
            },
            synthetic: None,
            n_train: get(&values, "n_train", d.n_train)?,
            epochs: get(&values, "epochs", d.epochs)?,
            lr: get(&values, "lr", d.lr)?,
            samples: get(&values, "samples", d.samples)?,
            seed: get(&values, "seed", d.seed)?,
            methods: match values.get("methods") {
                Some((_, v)) => v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<Method>().map_err(|e| CliError::Config(format!("methods: {e}"))))
                    .collect::<Result<_, _>>()?,
                None => d.methods,
            },
            output_dir: base.join(get(&values, "output_dir", "output".to_string())?),
            parallel: get(&values, "parallel", false)?,
        };
        if get(&values, "synthetic", false)? {
            let s = SyntheticSpec::default();
            config.synthetic = Some(SyntheticSpec {
                seed: get(&values, "synthetic.seed", s.seed)?,
                n_cycles: get(&values, "synthetic.cycles", s.n_cycles)?,
                n_train: config.n_train,
                theta: EmfParams::new(
                    get(&values, "synthetic.theta1", s.theta.theta1)?,
                    get(&values, "synthetic.theta2", s.theta.theta2)?,
                    get(&values, "synthetic.theta3", s.theta.theta3)?,
                ),
                residual_amplitude: get(&values, "synthetic.residual_amplitude", s.residual_amplitude)?,
                noise_std: get(&values, "synthetic.noise_std", s.noise_std)?,
                samples_per_cycle: s.samples_per_cycle,
            });
        } else if let Some(key) = values.keys().find(|k| k.starts_with("synthetic.")) {
            return Err(CliError::Config(format!("{key}: set `synthetic = true` to use generator keys")));
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.cells.is_empty() && self.synthetic.is_none() {
            return Err(CliError::Config("cells: no cell files given and `synthetic` is off".into()));
        }
        if self.methods.is_empty() {
            return Err(CliError::Config("methods: at least one method is required".into()));
        }
        if self.n_train < 2 {
            return Err(CliError::Config("n_train: must be at least 2".into()));
        }
        if let Some(s) = &self.synthetic {
            if self.n_train >= s.n_cycles {
                return Err(CliError::Config(format!(
                    "n_train: must be less than synthetic.cycles ({}), got {}",
                    s.n_cycles, self.n_train
                )));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CliError::Config("lr: must be positive".into()));
        }
        if self.samples == 0 {
            return Err(CliError::Config("samples: must be at least 1".into()));
        }
        Ok(())
    }
}
