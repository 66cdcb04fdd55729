//! Levenberg-Marquardt recovery of the exponential trend from exact data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::emf_curve;
use sdgl::emf::{emf_eval, fit_emf, EmfParams};

#[test]
fn noiseless_fits_recover_twenty_random_parameter_sets() {
    let (param, rms) = common::emf_recovery(20).unwrap();
    assert!(param < 1e-6, "parameter error {param}");
    assert!(rms < 1e-8, "residual rms {rms}");
}

#[test]
fn reference_trend_recovered() {
    let truth = EmfParams::new(2.0, -0.15, 0.012);
    let (cycles, caps) = emf_curve(&truth, 125);
    let fit = fit_emf(&cycles, &caps, None).unwrap();
    assert!(fit.converged);
    for (got, want) in fit.params.as_array().iter().zip(truth.as_array()) {
        assert!((got - want).abs() < 1e-6);
    }
    assert!(fit.rms_residual < 1e-8);
}

#[test]
fn mirrored_sign_convention_also_fits() {
    // Decline through a positive amplitude and negative rate.
    let truth = EmfParams::new(1.2, 0.6, -0.01);
    let (cycles, caps) = emf_curve(&truth, 120);
    let fit = fit_emf(&cycles, &caps, None).unwrap();
    assert!(fit.rms_residual < 1e-8);
    for &i in &[130.0, 150.0] {
        assert!((emf_eval(&fit.params, i).unwrap() - emf_eval(&truth, i).unwrap()).abs() < 1e-6);
    }
}

#[test]
fn objective_trace_never_increases_on_noisy_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let truth = EmfParams::new(1.9, -0.2, 0.01);
    let (cycles, clean) = emf_curve(&truth, 100);
    let caps: Vec<f64> = clean.iter().map(|c| c + rng.random_range(-0.02..0.02)).collect();
    let fit = fit_emf(&cycles, &caps, None).unwrap();
    assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    let sse: f64 = fit.residuals.iter().map(|r| r * r).sum();
    assert!((sse / caps.len() as f64).sqrt() - fit.rms_residual < 1e-15);
}
