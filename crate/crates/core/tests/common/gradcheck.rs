//! Finite-difference gradient checks (h = 1e-5, relative 1e-4).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdgl::autodiff::{Tape, Var};
use sdgl::data::CycleProfile;
use sdgl::gp::gpr::{log_marginal_likelihood as lml, log_marginal_likelihood_tape, GpHyper};
use sdgl::gp::RbfKernel;
use sdgl::linalg::Matrix;
use sdgl::lstm::{feature_matrix, forward_batch, lstm_init, LstmWeights};

pub const H: f64 = 1e-5;
const REL: f64 = 1e-4;

/// Relative agreement, with a small floor so entries that are zero in
/// exact arithmetic are compared absolutely.
fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= REL * analytic.abs().max(numeric.abs()).max(1e-2)
}

pub fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

fn spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let m = random(rng, n, n, -1.0, 1.0);
    &m * m.transpose() + Matrix::identity(n, n) * n as f64
}

/// Builds a scalar from `inputs` on a fresh tape, then checks every input
/// entry's gradient against central differences.
fn check<F>(name: &str, inputs: &[Matrix], build: F) -> Result<(), String>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let value_at = |xs: &[Matrix]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|m| tape.leaf(m.clone(), false).unwrap()).collect();
        let out = build(&mut tape, &vars);
        tape.scalar_value(out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone(), true).unwrap()).collect();
    let out = build(&mut tape, &vars);
    tape.backward(out).unwrap();

    for (k, v) in vars.iter().enumerate() {
        let g = tape.grad(*v);
        for idx in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k][idx] += H;
            let mut minus = inputs.to_vec();
            minus[k][idx] -= H;
            let numeric = (value_at(&plus) - value_at(&minus)) / (2.0 * H);
            if !close(g[idx], numeric) {
                return Err(format!("{name}: input {k} entry {idx}: analytic {} vs numeric {numeric}", g[idx]));
            }
        }
    }
    Ok(())
}

/// `Σ W ⊙ v` for a fixed random `W`, so every output entry matters.
fn project(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let (r, c) = tape.value(v).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, r, c, -1.0, 1.0)).unwrap();
    let p = tape.mul(v, w).unwrap();
    tape.sum(p).unwrap()
}

/// Every tape primitive on 100 random instances of shapes up to 5×5.
/// Returns the number of instances checked per primitive.
pub fn primitives() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut per_primitive = std::collections::BTreeMap::new();
    for trial in 0..100u64 {
        let (r, c, k) = (rng.random_range(1..=5), rng.random_range(1..=5), rng.random_range(1..=5));
        let a = random(&mut rng, r, c, -2.0, 2.0);
        let b = random(&mut rng, r, c, -2.0, 2.0);
        let row = random(&mut rng, 1, c, -2.0, 2.0);
        let col = random(&mut rng, r, 1, -2.0, 2.0);
        let m = random(&mut rng, c, k, -2.0, 2.0);
        let pos = random(&mut rng, r, c, 0.2, 2.0);
        let s = spd(&mut rng, r);
        let rhs = random(&mut rng, r, k, -1.0, 1.0);
        let p = 100 + trial;

        let cases: Vec<(&str, Vec<Matrix>, Box<dyn Fn(&mut Tape, &[Var]) -> Var>)> = vec![
            (
                "add",
                vec![a.clone(), b.clone()],
                Box::new(move |t, v| {
                    let o = t.add(v[0], v[1]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "add_row_broadcast",
                vec![a.clone(), row.clone()],
                Box::new(move |t, v| {
                    let o = t.add(v[0], v[1]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "sub_col_broadcast",
                vec![col.clone(), a.clone()],
                Box::new(move |t, v| {
                    let o = t.sub(v[0], v[1]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "mul",
                vec![a.clone(), b.clone()],
                Box::new(move |t, v| {
                    let o = t.mul(v[0], v[1]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "mul_row_broadcast",
                vec![row.clone(), a.clone()],
                Box::new(move |t, v| {
                    let o = t.mul(v[0], v[1]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "matmul",
                vec![a.clone(), m.clone()],
                Box::new(move |t, v| {
                    let o = t.matmul(v[0], v[1]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "tanh",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let o = t.tanh(v[0]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "sigmoid",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let o = t.sigmoid(v[0]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "exp",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let o = t.exp(v[0]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "log",
                vec![pos.clone()],
                Box::new(move |t, v| {
                    let o = t.log(v[0]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "sqrt",
                vec![pos.clone()],
                Box::new(move |t, v| {
                    let o = t.sqrt(v[0]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "sum",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let o = t.sum(v[0]).unwrap();
                    let o2 = t.mul(o, o).unwrap();
                    t.sum(o2).unwrap()
                }),
            ),
            (
                "sum_columns",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let o = t.sum_columns(v[0]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "sum_rows",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let o = t.sum_rows(v[0]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "scale",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let o = t.scale(v[0], -2.5).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "add_const",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let o = t.add_const(v[0], 0.7).unwrap();
                    let o = t.mul(o, o).unwrap();
                    project(t, o, p)
                }),
            ),
            ("sum_squares", vec![a.clone()], Box::new(move |t, v| t.sum_squares(v[0]).unwrap())),
            (
                "concat_rows",
                vec![a.clone(), row.clone(), b.clone()],
                Box::new(move |t, v| {
                    let o = t.concat_rows(v).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "slice",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let (r, c) = t.value(v[0]).shape();
                    let o = t.slice(v[0], r / 2..r, 0..c.div_ceil(2)).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "transpose",
                vec![m.clone()],
                Box::new(move |t, v| {
                    let o = t.transpose(v[0]).unwrap();
                    project(t, o, p)
                }),
            ),
            (
                "spd_solve",
                vec![s.clone(), rhs.clone()],
                Box::new(move |t, v| {
                    let o = t.spd_solve(v[0], v[1]).unwrap();
                    project(t, o, p)
                }),
            ),
            ("spd_logdet", vec![s.clone()], Box::new(move |t, v| t.spd_logdet(v[0]).unwrap())),
            (
                "fan_out_composite",
                vec![a.clone()],
                Box::new(move |t, v| {
                    let e = t.exp(v[0]).unwrap();
                    let th = t.tanh(v[0]).unwrap();
                    let o = t.mul(e, th).unwrap();
                    let o = t.add(o, v[0]).unwrap();
                    project(t, o, p)
                }),
            ),
        ];
        for (name, inputs, build) in &cases {
            check(name, inputs, build)?;
            *per_primitive.entry(*name).or_insert(0) += 1;
        }
    }
    Ok(per_primitive.values().copied().min().unwrap_or(0))
}

/// Log marginal likelihood hyperparameter gradients on random layers.
pub fn log_marginal_likelihood(instances: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..instances {
        let n = rng.random_range(3..12);
        let d = rng.random_range(1..4);
        let x = random(&mut rng, n, d, -2.0, 2.0);
        let y = random(&mut rng, n, 1, -1.0, 1.0);
        let ls: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..2.0)).collect();
        let hyper = GpHyper::new(
            RbfKernel::new(rng.random_range(0.3..2.0), &ls).unwrap(),
            rng.random_range(-0.5..0.5),
            rng.random_range(0.01..0.5),
        )
        .unwrap();

        let mut tape = Tape::new();
        let h = hyper.to_tape(&mut tape, true).unwrap();
        let xv = tape.constant(x.clone()).unwrap();
        let yv = tape.constant(y.clone()).unwrap();
        let l = log_marginal_likelihood_tape(&mut tape, &h, xv, yv).unwrap();
        let direct = lml(&hyper, &x, &y).unwrap();
        if (tape.scalar_value(l) - direct).abs() >= 1e-9 {
            return Err(format!("tape likelihood {} vs direct {direct}", tape.scalar_value(l)));
        }
        tape.backward(l).unwrap();
        let grads = h.grads(&tape);

        // Differences of the direct (tape-free) likelihood.
        let params = hyper.to_params();
        for (k, g) in grads.iter().enumerate() {
            for idx in 0..params[k].len() {
                let at = |delta: f64| {
                    let mut p = params.clone();
                    p[k][idx] += delta;
                    lml(&GpHyper::from_params(&p), &x, &y).unwrap()
                };
                let numeric = (at(H) - at(-H)) / (2.0 * H);
                if !close(g[idx], numeric) {
                    return Err(format!("likelihood param {k}[{idx}]: {} vs {numeric}", g[idx]));
                }
            }
        }
    }
    Ok(())
}

pub fn random_profiles(rng: &mut ChaCha8Rng, n: usize) -> Vec<CycleProfile> {
    (0..n).map(|_| CycleProfile::new(random(rng, 20, 3, -1.5, 1.5)).unwrap()).collect()
}

/// Full 20-step, two-layer unroll: weight gradients of a projected feature
/// batch against differences of the tape-free forward pass.
pub fn lstm_unroll(instances: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for instance in 0..instances {
        let weights = lstm_init(instance);
        let profiles = random_profiles(&mut rng, 3);
        let proj = random(&mut rng, 3, 2, -1.0, 1.0);
        let value = |w: &LstmWeights| -> f64 { feature_matrix(w, &profiles).unwrap().component_mul(&proj).sum() };

        let mut tape = Tape::new();
        let vars = weights.to_tape(&mut tape, true).unwrap();
        let refs: Vec<&CycleProfile> = profiles.iter().collect();
        let f = forward_batch(&mut tape, &vars, &refs).unwrap();
        let pc = tape.constant(proj.clone()).unwrap();
        let prod = tape.mul(f, pc).unwrap();
        let out = tape.sum(prod).unwrap();
        if (tape.scalar_value(out) - value(&weights)).abs() >= 1e-12 {
            return Err("tape and tape-free forward passes disagree".into());
        }
        tape.backward(out).unwrap();
        let grads = vars.grads(&tape);

        for (k, g) in grads.iter().enumerate() {
            // A spread of entries per tensor; the full set is tens of thousands.
            for _ in 0..12 {
                let idx = rng.random_range(0..g.len());
                let at = |delta: f64| {
                    let mut w = weights.clone();
                    w.tensors_mut()[k][idx] += delta;
                    value(&w)
                };
                let numeric = (at(H) - at(-H)) / (2.0 * H);
                if !close(g[idx], numeric) {
                    return Err(format!("lstm tensor {k} entry {idx}: {} vs {numeric}", g[idx]));
                }
            }
        }
    }
    Ok(())
}
