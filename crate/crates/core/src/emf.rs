//! Exponential mean function `m(i) = θ1 + θ2·exp(θ3·i)` and its
//! Levenberg–Marquardt least-squares fit.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 500;
const TOLERANCE: f64 = 1e-10;
const INITIAL_DAMPING: f64 = 1e-3;
const DAMPING_FACTOR: f64 = 10.0;
const MAX_DAMPING: f64 = 1e16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmfParams {
    /// Ah, asymptotic offset.
    pub theta1: f64,
    /// Ah, exponential amplitude.
    pub theta2: f64,
    /// Per cycle, exponential rate.
    pub theta3: f64,
}

impl EmfParams {
    pub const fn new(theta1: f64, theta2: f64, theta3: f64) -> Self {
        Self { theta1, theta2, theta3 }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.theta1, self.theta2, self.theta3]
    }

    fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.theta1, self.theta2, self.theta3)
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

pub fn emf_eval(params: &EmfParams, cycle: f64) -> Result<f64> {
    let e = (params.theta3 * cycle).exp();
    if !e.is_finite() {
        return Err(Error::Overflow { cycle });
    }
    Ok(params.theta1 + params.theta2 * e)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmfFit {
    pub params: EmfParams,
    /// `y_i - m(i)` over the fitted points.
    pub residuals: Vec<f64>,
    pub rms_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Sum of squared residuals after each accepted step, starting with the
    /// initial point of the winning start.
    pub objective_trace: Vec<f64>,
}

/// Start point: asymptote at the last capacity, amplitude spanning the
/// first-to-last drop, and a rate of `±1/n` whose sign makes the exponential
/// term shrink toward the end of the data.
pub fn default_init(cycles: &[f64], capacities: &[f64]) -> Result<EmfParams> {
    check_inputs(cycles, capacities)?;
    let n = capacities.len() as f64;
    let first = capacities[0];
    let last = capacities[capacities.len() - 1];
    let theta3 = if last > first { 1.0 / n } else { -1.0 / n };
    Ok(EmfParams::new(last, first - last, theta3))
}

fn check_inputs(cycles: &[f64], capacities: &[f64]) -> Result<()> {
    if cycles.len() != capacities.len() {
        return Err(Error::invalid(format!("{} cycle indices but {} capacities", cycles.len(), capacities.len())));
    }
    if cycles.len() < 4 {
        return Err(Error::invalid("mean function fit needs at least 4 points"));
    }
    if cycles.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("cycle indices must be strictly increasing"));
    }
    if cycles.iter().chain(capacities).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mean function fit input".into()));
    }
    Ok(())
}

/// Least-squares fit of the mean function.
///
/// With an explicit `init` a single Levenberg–Marquardt run starts there.
/// Without one, runs start from [`default_init`] and from a small grid of
/// rates of both signs (amplitude and offset solved linearly for each), and
/// the lowest objective wins. A decelerating and an accelerating decline sit
/// in different basins, so one start alone can stall at the `θ3 → 0` edge.
pub fn fit_emf(cycles: &[f64], capacities: &[f64], init: Option<EmfParams>) -> Result<EmfFit> {
    check_inputs(cycles, capacities)?;
    let starts = match init {
        Some(p) => vec![p],
        None => {
            let mut s = vec![default_init(cycles, capacities)?];
            let span = cycles[cycles.len() - 1] - cycles[0];
            for mult in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
                for sign in [1.0, -1.0] {
                    let rate = sign * mult / span.max(1.0);
                    if let Some(p) = linear_solve_for_rate(cycles, capacities, rate) {
                        s.push(p);
                    }
                }
            }
            s
        }
    };

    let mut best: Option<EmfFit> = None;
    for start in starts {
        let fit = levenberg_marquardt(cycles, capacities, start)?;
        let better = match &best {
            None => true,
            Some(b) => sse(&fit.residuals) < sse(&b.residuals),
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Offset and amplitude minimizing the squared error for a fixed rate.
fn linear_solve_for_rate(cycles: &[f64], y: &[f64], rate: f64) -> Option<EmfParams> {
    let (mut s1, mut se, mut see, mut sy, mut sey) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&i, &yi) in cycles.iter().zip(y) {
        let e = (rate * i).exp();
        s1 += 1.0;
        se += e;
        see += e * e;
        sy += yi;
        sey += e * yi;
    }
    let det = s1 * see - se * se;
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    let theta2 = (s1 * sey - se * sy) / det;
    let theta1 = (sy - theta2 * se) / s1;
    let p = EmfParams::new(theta1, theta2, rate);
    p.is_finite().then_some(p)
}

fn sse(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn residuals_at(cycles: &[f64], y: &[f64], p: &EmfParams) -> Option<Vec<f64>> {
    let r: Vec<f64> = cycles.iter().zip(y).map(|(&i, &yi)| yi - (p.theta1 + p.theta2 * (p.theta3 * i).exp())).collect();
    r.iter().all(|v| v.is_finite()).then_some(r)
}

fn levenberg_marquardt(cycles: &[f64], y: &[f64], start: EmfParams) -> Result<EmfFit> {
    let mut params = start;
    let Some(mut r) = residuals_at(cycles, y, &params) else {
        return Ok(finish(params, vec![f64::INFINITY; y.len()], false, 0, vec![]));
    };
    let mut cost = sse(&r);
    let mut trace = vec![cost];
    let mut damping = INITIAL_DAMPING;
    let mut converged = cost == 0.0;
    let mut iterations = 0;

    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        // J is the Jacobian of the model; the residual Jacobian is -J.
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (&i, &ri) in cycles.iter().zip(&r) {
            let e = (params.theta3 * i).exp();
            let row = Vector3::new(1.0, e, params.theta2 * i * e);
            jtj += row * row.transpose();
            jtr += row * ri;
        }
        if jtr.norm() < TOLERANCE {
            converged = true;
            break;
        }
        let diag_floor = 1e-12 * jtj.diagonal().max().max(1e-300);

        let mut accepted = false;
        while damping <= MAX_DAMPING {
            let mut a = jtj;
            for k in 0..3 {
                a[(k, k)] += damping * jtj[(k, k)].max(diag_floor);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                damping *= DAMPING_FACTOR;
                continue;
            };
            let candidate = EmfParams::from_vector(&(params.to_vector() + step));
            match residuals_at(cycles, y, &candidate) {
                Some(cr) if sse(&cr) < cost => {
                    let new_cost = sse(&cr);
                    let rel = (cost - new_cost) / cost;
                    params = candidate;
                    r = cr;
                    cost = new_cost;
                    trace.push(cost);
                    damping = (damping / DAMPING_FACTOR).max(1e-12);
                    accepted = true;
                    if rel < TOLERANCE || cost == 0.0 {
                        converged = true;
                    }
                    break;
                }
                _ => damping *= DAMPING_FACTOR,
            }
        }
        if !accepted {
            // No damping level improves the objective: a numerical minimum.
            converged = true;
        }
    }
    Ok(finish(params, r, converged, iterations, trace))
}

fn finish(
    params: EmfParams,
    residuals: Vec<f64>,
    converged: bool,
    iterations: usize,
    objective_trace: Vec<f64>,
) -> EmfFit {
    let rms_residual = (sse(&residuals) / residuals.len() as f64).sqrt();
    EmfFit { params, residuals, rms_residual, converged, iterations, objective_trace }
}
