//! Exact GP layers against explicit matrix inversion and Monte Carlo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sdgl::gp::dgp::sample_layer;
use sdgl::gp::gpr::{gpr_predict, GpHyper, GpLayer};
use sdgl::gp::{rbf_eval, RbfKernel};
use sdgl::linalg::Matrix;

pub fn hyper(sv: f64, ls: &[f64], mean: f64, noise: f64) -> GpHyper {
    GpHyper::new(RbfKernel::new(sv, ls).unwrap(), mean, noise).unwrap()
}

/// Posterior mean and latent variance by explicit inversion of `K + σ²I`.
pub fn dense_oracle(h: &GpHyper, x: &Matrix, y: &[f64], xs: &[f64]) -> (f64, f64) {
    let n = x.nrows();
    let row = |i: usize| -> Vec<f64> { x.row(i).iter().copied().collect() };
    let k = Matrix::from_fn(n, n, |i, j| {
        rbf_eval(&h.kernel, &row(i), &row(j)).unwrap() + if i == j { h.noise_variance() } else { 0.0 }
    });
    let kinv = k.try_inverse().expect("invertible");
    let kstar = Matrix::from_fn(n, 1, |i, _| rbf_eval(&h.kernel, &row(i), xs).unwrap());
    let centered = Matrix::from_fn(n, 1, |i, _| y[i] - h.constant_mean);
    let mean = h.constant_mean + (kstar.transpose() * &kinv * centered)[(0, 0)];
    let var = rbf_eval(&h.kernel, xs, xs).unwrap() - (kstar.transpose() * &kinv * &kstar)[(0, 0)];
    (mean, var)
}

/// Random layers with `n = 1..=20` training points, three layers per size
/// and three test inputs per layer. Returns the number of comparisons.
pub fn dense_suite() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut count = 0;
    for n in 1..=20 {
        for _ in 0..3 {
            let d = rng.random_range(1..4);
            let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ls: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..1.5)).collect();
            let h = hyper(rng.random_range(0.5..2.0), &ls, rng.random_range(-0.3..0.3), rng.random_range(0.05..0.5));
            let layer =
                GpLayer::condition(h.clone(), &x, &Matrix::from_column_slice(n, 1, &y)).map_err(|e| e.to_string())?;
            for _ in 0..3 {
                let xs: Vec<f64> = (0..d).map(|_| rng.random_range(-2.5..2.5)).collect();
                let post = gpr_predict(&layer, &xs).map_err(|e| e.to_string())?;
                let (m, v) = dense_oracle(&h, &x, &y, &xs);
                if (post.mean[0] - m).abs() >= 1e-8 || (post.latent_variance - v).abs() >= 1e-8 {
                    return Err(format!("n={n}: ({}, {}) vs ({m}, {v})", post.mean[0], post.latent_variance));
                }
                if post.observed(0).variance != post.latent_variance.max(0.0) + h.noise_variance() {
                    return Err(format!("n={n}: observed variance is not latent plus noise"));
                }
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Near-noiseless layers reproduce their targets. Returns the worst error.
pub fn interpolation() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for n in [1usize, 4, 9, 15, 20] {
        let x = Matrix::from_fn(n, 1, |i, _| i as f64 * 0.7 + rng.random_range(0.0..0.2));
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let layer = GpLayer::condition(hyper(1.0, &[0.5], 0.0, 1e-12), &x, &Matrix::from_column_slice(n, 1, &y))
            .map_err(|e| e.to_string())?;
        for i in 0..n {
            let post = gpr_predict(&layer, &[x[(i, 0)]]).map_err(|e| e.to_string())?;
            worst = worst.max((post.mean[0] - y[i]).abs());
        }
    }
    Ok(worst)
}

pub fn fitted_layer(seed: u64) -> GpLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(12, 2, |_, _| rng.random_range(-1.0..1.0));
    let y = Matrix::from_fn(12, 1, |_, _| rng.random_range(-1.0..1.0));
    GpLayer::condition(hyper(0.8, &[0.6, 0.9], 0.1, 0.05), &x, &y).unwrap()
}

/// Sample mean and variance of `draws` sampled layer outputs at three
/// inputs, in units of their Monte Carlo standard errors. Returns the
/// largest deviation.
pub fn moment_deviation(draws: usize) -> f64 {
    let layer = fitted_layer(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for x in [[0.1, -0.2], [0.9, 0.9], [2.5, -2.0]] {
        let post = gpr_predict(&layer, &x).unwrap();
        let (mu, k) = (post.mean[0], post.latent_variance);
        let out: Vec<f64> =
            (0..draws).map(|_| sample_layer(&layer, &x, &[StandardNormal.sample(&mut rng)]).unwrap()[0]).collect();
        let n = draws as f64;
        let mean = out.iter().sum::<f64>() / n;
        let var = out.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // Standard errors of the sample mean and of the sample variance of a normal.
        let se_mean = (k / n).sqrt();
        let se_var = k * (2.0 / (n - 1.0)).sqrt();
        worst = worst.max((mean - mu).abs() / se_mean).max((var - k).abs() / se_var);
    }
    worst
}
