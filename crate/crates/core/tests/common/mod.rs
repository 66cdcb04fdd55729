//! Checks shared by the per-area tests and the acceptance run.
#![allow(dead_code)]

pub mod gp_oracle;
pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdgl::emf::{emf_eval, fit_emf, EmfParams};

/// Exact trend curve over cycles `1..=n`.
pub fn emf_curve(theta: &EmfParams, n: usize) -> (Vec<f64>, Vec<f64>) {
    let cycles: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    let caps = cycles.iter().map(|&i| emf_eval(theta, i).unwrap()).collect();
    (cycles, caps)
}

/// Fits `draws` random noiseless trends over 125 cycles. Returns the worst
/// parameter error and the worst residual RMS.
pub fn emf_recovery(draws: usize) -> Result<(f64, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_param, mut worst_rms) = (0.0f64, 0.0f64);
    for draw in 0..draws {
        let truth =
            EmfParams::new(rng.random_range(1.0..2.5), rng.random_range(-0.8..-0.05), rng.random_range(0.002..0.02));
        let (cycles, caps) = emf_curve(&truth, 125);
        let fit = fit_emf(&cycles, &caps, None).map_err(|e| format!("draw {draw}: {e}"))?;
        for (got, want) in fit.params.as_array().iter().zip(truth.as_array()) {
            worst_param = worst_param.max((got - want).abs());
        }
        worst_rms = worst_rms.max(fit.rms_residual);
        let mean = fit.residuals.iter().sum::<f64>() / fit.residuals.len() as f64;
        if mean.abs() >= 1e-8 {
            return Err(format!("draw {draw}: residual mean {mean}"));
        }
    }
    Ok((worst_param, worst_rms))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
