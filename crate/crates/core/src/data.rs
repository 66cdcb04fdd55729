//! Cell datasets: CSV ingestion, stride-5 profile resampling, z-score
//! normalization, chronological splits and a synthetic cell generator.
//!
//! CSV schema, one file per cell:
//!
//! ```text
//! cycle,step,voltage,current,temperature,capacity
//! 1,0,4.19,-2.0,24.1,1.856
//! ...
//! ```
//!
//! Rows are sorted by `(cycle, step)`. `capacity` repeats on every row of a
//! cycle. Each cycle's rows hold its discharge interval, already isolated by
//! the producer.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::emf::EmfParams;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Rows in a resampled profile.
pub const PROFILE_STEPS: usize = 20;
/// Sampling stride over the raw series.
pub const PROFILE_STRIDE: usize = 5;
/// Voltage, current, temperature.
pub const CHANNELS: usize = 3;
/// Shortest raw series that still yields every strided sample.
pub const MIN_SERIES_LEN: usize = PROFILE_STEPS * PROFILE_STRIDE;

pub const CSV_HEADER: [&str; 6] = ["cycle", "step", "voltage", "current", "temperature", "capacity"];

#[derive(Clone, Debug, PartialEq)]
pub struct RawCycle {
    pub cycle_index: u32,
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
    pub temperature: Vec<f64>,
    /// Ah.
    pub capacity: f64,
}

impl RawCycle {
    pub fn len(&self) -> usize {
        self.voltage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltage.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.voltage.len();
        if self.current.len() != n || self.temperature.len() != n {
            return Err(Error::invalid(format!("cycle {}: channel series lengths differ", self.cycle_index)));
        }
        if n < MIN_SERIES_LEN {
            return Err(Error::invalid(format!(
                "cycle {}: series has {n} samples, need at least {MIN_SERIES_LEN}",
                self.cycle_index
            )));
        }
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(Error::invalid(format!("cycle {}: capacity must be positive", self.cycle_index)));
        }
        Ok(())
    }
}

/// A `20 x 3` matrix of (voltage, current, temperature) rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleProfile {
    matrix: Matrix,
}

impl CycleProfile {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.shape() != (PROFILE_STEPS, CHANNELS) {
            return Err(Error::Dimension {
                op: "cycle_profile",
                detail: format!("expected {PROFILE_STEPS}x{CHANNELS}, got {}x{}", matrix.nrows(), matrix.ncols()),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cycle profile".into()));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

/// Picks sample `5 t` of every channel for `t = 0..20`.
pub fn resample_profile(raw: &RawCycle) -> Result<CycleProfile> {
    raw.validate()?;
    let channels = [&raw.voltage, &raw.current, &raw.temperature];
    let m = Matrix::from_fn(PROFILE_STEPS, CHANNELS, |t, c| channels[c][PROFILE_STRIDE * t]);
    CycleProfile::new(m)
}

/// Per-channel z-score statistics taken from training cycles.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
    /// Divisor applied to capacities; 1.0 unless capacity scaling is enabled.
    pub capacity_scale: f64,
}

impl NormalizationStats {
    pub fn identity() -> Self {
        Self { mean: [0.0; CHANNELS], std: [1.0; CHANNELS], capacity_scale: 1.0 }
    }

    pub fn normalize(&self, profile: &CycleProfile) -> CycleProfile {
        let m = Matrix::from_fn(PROFILE_STEPS, CHANNELS, |t, c| (profile.matrix[(t, c)] - self.mean[c]) / self.std[c]);
        CycleProfile { matrix: m }
    }
}

pub fn fit_normalization(train: &[CycleProfile]) -> Result<NormalizationStats> {
    if train.len() < 2 {
        return Err(Error::invalid(format!("normalization needs at least 2 training cycles, got {}", train.len())));
    }
    let count = (train.len() * PROFILE_STEPS) as f64;
    let mut mean = [0.0; CHANNELS];
    let mut std = [0.0; CHANNELS];
    for c in 0..CHANNELS {
        let mu = train.iter().map(|p| p.matrix.column(c).sum()).sum::<f64>() / count;
        let var = train
            .iter()
            .flat_map(|p| p.matrix.column(c).iter().map(|v| (v - mu).powi(2)).collect::<Vec<_>>())
            .sum::<f64>()
            / count;
        mean[c] = mu;
        let sd = var.sqrt();
        // Relative floor so float noise around a constant channel counts as zero.
        std[c] = if sd > 1e-12 * mu.abs().max(1.0) { sd } else { 1.0 };
    }
    Ok(NormalizationStats { mean, std, capacity_scale: 1.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleRecord {
    pub cycle_index: u32,
    /// Resampled, not yet normalized.
    pub profile: CycleProfile,
    pub capacity: f64,
}

/// Chronologically ordered cycles of one cell plus its training prefix
/// length.
#[derive(Clone, Debug, PartialEq)]
pub struct CellDataset {
    pub cell_id: String,
    cycles: Vec<CycleRecord>,
    n_train: usize,
}

impl CellDataset {
    pub fn new(cell_id: impl Into<String>, cycles: Vec<CycleRecord>, n_train: usize) -> Result<Self> {
        if cycles.windows(2).any(|w| w[0].cycle_index >= w[1].cycle_index) {
            return Err(Error::invalid("cycle indices must be strictly increasing"));
        }
        check_split(n_train, cycles.len())?;
        Ok(Self { cell_id: cell_id.into(), cycles, n_train })
    }

    pub fn from_raw(cell_id: impl Into<String>, raw: &[RawCycle], n_train: usize) -> Result<Self> {
        let cycles = raw
            .iter()
            .map(|r| {
                Ok(CycleRecord { cycle_index: r.cycle_index, profile: resample_profile(r)?, capacity: r.capacity })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cell_id, cycles, n_train)
    }

    pub fn cycles(&self) -> &[CycleRecord] {
        &self.cycles
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_total(&self) -> usize {
        self.cycles.len()
    }

    pub fn n_test(&self) -> usize {
        self.cycles.len() - self.n_train
    }

    pub fn train(&self) -> &[CycleRecord] {
        &self.cycles[..self.n_train]
    }

    pub fn test(&self) -> &[CycleRecord] {
        &self.cycles[self.n_train..]
    }

    /// Same cycles with a different training prefix.
    pub fn with_n_train(&self, n_train: usize) -> Result<Self> {
        check_split(n_train, self.cycles.len())?;
        Ok(Self { n_train, ..self.clone() })
    }

    pub fn cycles_mut(&mut self) -> &mut [CycleRecord] {
        &mut self.cycles
    }
}

fn check_split(n_train: usize, n_total: usize) -> Result<()> {
    if n_train == 0 || n_train >= n_total {
        return Err(Error::invalid(format!("n_train must satisfy 0 < n_train < {n_total}, got {n_train}")));
    }
    Ok(())
}

/// First `n_train` cycles for training, the rest for testing.
pub fn make_split(dataset: &CellDataset, n_train: usize) -> Result<(&[CycleRecord], &[CycleRecord])> {
    check_split(n_train, dataset.n_total())?;
    Ok(dataset.cycles.split_at(n_train))
}

pub fn parse_cell_csv(path: impl AsRef<Path>) -> Result<Vec<RawCycle>> {
    let file = std::fs::File::open(path)?;
    read_cell_csv(file)
}

pub fn read_cell_csv<R: Read>(reader: R) -> Result<Vec<RawCycle>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 6];
    for (slot, name) in col.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing column `{name}`") })?;
    }

    let mut cycles: Vec<RawCycle> = Vec::new();
    let mut first_line: Vec<usize> = Vec::new();
    let mut last_step: Option<i64> = None;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| -> Result<f64> {
            let raw = rec.get(col[i]).unwrap_or("");
            raw.parse::<f64>()
                .map_err(|_| Error::Parse { line, msg: format!("column `{}`: cannot parse `{raw}`", CSV_HEADER[i]) })
        };
        let cycle_raw = rec.get(col[0]).unwrap_or("");
        let cycle: u32 = cycle_raw
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("column `cycle`: cannot parse `{cycle_raw}`") })?;
        let step = field(1)? as i64;
        let (v, i, t, cap) = (field(2)?, field(3)?, field(4)?, field(5)?);

        match cycles.last_mut() {
            Some(cur) if cur.cycle_index == cycle => {
                if last_step.is_some_and(|s| step <= s) {
                    return Err(Error::Parse { line, msg: format!("cycle {cycle}: steps must increase") });
                }
                cur.voltage.push(v);
                cur.current.push(i);
                cur.temperature.push(t);
            }
            Some(cur) if cur.cycle_index > cycle => {
                return Err(Error::Parse {
                    line,
                    msg: format!("cycle {cycle} follows cycle {}; cycles must increase", cur.cycle_index),
                });
            }
            _ => {
                cycles.push(RawCycle {
                    cycle_index: cycle,
                    voltage: vec![v],
                    current: vec![i],
                    temperature: vec![t],
                    capacity: cap,
                });
                first_line.push(line);
            }
        }
        last_step = Some(step);
    }

    for (c, &line) in cycles.iter().zip(&first_line) {
        if c.len() < MIN_SERIES_LEN {
            return Err(Error::Parse {
                line,
                msg: format!("cycle {} has {} samples, need at least {MIN_SERIES_LEN}", c.cycle_index, c.len()),
            });
        }
        if !(c.capacity > 0.0) {
            return Err(Error::Parse { line, msg: format!("cycle {} has non-positive capacity", c.cycle_index) });
        }
    }
    Ok(cycles)
}

pub fn write_cell_csv<W: Write>(writer: W, cycles: &[RawCycle]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for c in cycles {
        for k in 0..c.len() {
            w.write_record([
                c.cycle_index.to_string(),
                k.to_string(),
                c.voltage[k].to_string(),
                c.current[k].to_string(),
                c.temperature[k].to_string(),
                c.capacity.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parameters of the synthetic cell generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_cycles: usize,
    pub n_train: usize,
    pub theta: EmfParams,
    /// Amplitude in Ah of a period-40 sinusoid added to the trend.
    pub residual_amplitude: f64,
    /// Standard deviation in Ah of i.i.d. Gaussian capacity noise.
    pub noise_std: f64,
    pub samples_per_cycle: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_cycles: 168,
            n_train: 125,
            theta: EmfParams::new(2.0, -0.15, 0.012),
            residual_amplitude: 0.02,
            noise_std: 0.01,
            samples_per_cycle: 120,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let t = &self.theta;
        if !(t.theta3 < 0.0 || t.theta2 < 0.0) {
            return Err(Error::invalid("theta must produce a declining trend (theta2 < 0 or theta3 < 0)"));
        }
        if self.n_cycles < 20 {
            return Err(Error::invalid("synthetic cell needs at least 20 cycles"));
        }
        if self.samples_per_cycle < MIN_SERIES_LEN {
            return Err(Error::invalid(format!("samples_per_cycle must be at least {MIN_SERIES_LEN}")));
        }
        if !(self.residual_amplitude >= 0.0 && self.noise_std >= 0.0) {
            return Err(Error::invalid("residual amplitude and noise must be non-negative"));
        }
        Ok(())
    }
}

fn trend_capacity(spec: &SyntheticSpec, i: u32) -> f64 {
    let t = &spec.theta;
    t.theta1 + t.theta2 * (t.theta3 * i as f64).exp()
}

/// Noise-free part of the synthetic capacity at cycle `i`: trend plus the
/// sinusoidal residual.
pub fn synthetic_clean_capacity(spec: &SyntheticSpec, i: u32) -> f64 {
    trend_capacity(spec, i) + spec.residual_amplitude * (2.0 * PI * i as f64 / 40.0).sin()
}

/// Raw cycles of a synthetic cell. The discharge curve's progress rate
/// scales inversely with the trend capacity, so profile shape drifts
/// monotonically with cycle index. The sinusoidal residual leaves a separate
/// signature early in the cycle: a raised rest voltage and a lower starting
/// temperature, relaxing away within the first part of the discharge. Capacity noise is not
/// visible in the profile.
pub fn generate_synthetic_raw(spec: &SyntheticSpec) -> Result<Vec<RawCycle>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let capacity_noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let sensor = |sd: f64| Normal::new(0.0, sd).expect("positive sd");
    let (v_noise, i_noise, t_noise) = (sensor(2e-3), sensor(1e-3), sensor(2e-2));
    let reference = spec.theta.theta1 + spec.theta.theta2 * spec.theta.theta3.exp();
    let n = spec.samples_per_cycle;

    let mut out = Vec::with_capacity(spec.n_cycles);
    for idx in 1..=spec.n_cycles as u32 {
        let clean = synthetic_clean_capacity(spec, idx);
        let regen = clean - trend_capacity(spec, idx);
        let eps = if spec.noise_std > 0.0 { capacity_noise.sample(&mut rng) } else { 0.0 };
        let capacity = clean + eps;
        if !(capacity > 0.0) {
            return Err(Error::invalid(format!("synthetic capacity at cycle {idx} is not positive")));
        }
        let rate = reference.abs().max(0.1) / trend_capacity(spec, idx).max(0.05);
        let mut voltage = Vec::with_capacity(n);
        let mut current = Vec::with_capacity(n);
        let mut temperature = Vec::with_capacity(n);
        for k in 0..n {
            let time = k as f64 / n as f64;
            // Fraction of charge drawn, saturating smoothly near 1.
            let u = 1.0 - (-1.2 * rate * time).exp();
            let relax = regen * (-time / 0.15).exp();
            voltage.push(4.2 - 0.6 * u - 0.5 * u.powi(4) + 2.0 * relax + v_noise.sample(&mut rng));
            current.push(-2.0 + 0.05 * u + i_noise.sample(&mut rng));
            temperature.push(24.0 + 9.0 * u * u + 0.004 * idx as f64 - 50.0 * relax + t_noise.sample(&mut rng));
        }
        out.push(RawCycle { cycle_index: idx, voltage, current, temperature, capacity });
    }
    Ok(out)
}

pub fn generate_synthetic_cell(spec: &SyntheticSpec) -> Result<CellDataset> {
    let raw = generate_synthetic_raw(spec)?;
    CellDataset::from_raw(format!("synthetic-{}", spec.seed), &raw, spec.n_train)
}
