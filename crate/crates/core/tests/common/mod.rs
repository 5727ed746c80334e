#![allow(dead_code)]

pub mod gradcheck;

use ccgvae::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use ccgvae::util::stream_rng;
use rand::Rng;

/// Step for smooth primitives.
pub const H_SMOOTH: f64 = 1e-3;
/// Step for anything routed through a ReLU, so a probe rarely crosses a kink.
pub const H_KINKED: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const FD_TRIALS: u64 = 10;

pub fn random_tensor(rows: usize, cols: usize, scale: f64, seed: u64) -> Tensor {
    let mut rng = stream_rng(seed, 7);
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Reduces a node to a scalar against a fixed random projection, so every
/// output entry contributes with a distinct weight.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let (r, c) = (shape[0], shape.get(1).copied().unwrap_or(1));
    let w = tape.constant(random_tensor(r, c, 1.0, seed ^ 0xabc));
    let w = if shape.len() == 2 { w } else { tape.reshape(w, &shape).unwrap() };
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

/// `‖a − n‖ / (‖a‖ + ‖n‖)` between the reverse-mode gradient and central
/// differences, over the given inputs and parameters jointly. `params` may
/// list a subset of entries per parameter to keep large checks cheap.
pub fn gradient_error<F>(
    store: &mut ParamStore,
    params: &[(ParamId, Option<Vec<usize>>)],
    inputs: &[Tensor],
    h: f64,
    build: F,
) -> f64
where
    F: Fn(&mut Tape, &ParamStore, &[Var]) -> Var,
{
    let eval = |store: &ParamStore, inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, store, &vars);
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = build(&mut tape, store, &vars);
    let grads = tape.backward(out).unwrap();
    let param_grads = grads.param_grads();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let g = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        for k in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= h;
            analytic.push(g.data()[k]);
            numeric.push((eval(store, &plus) - eval(store, &minus)) / (2.0 * h));
        }
    }
    for (id, subset) in params {
        let len = store.value(*id).len();
        let g = param_grads
            .iter()
            .find(|(p, _)| p == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| Tensor::zeros(store.value(*id).shape()));
        let entries: Vec<usize> = subset.clone().unwrap_or_else(|| (0..len).collect());
        for k in entries {
            store.nudge(*id, k, h);
            let up = eval(store, inputs);
            store.nudge(*id, k, -2.0 * h);
            let down = eval(store, inputs);
            store.nudge(*id, k, h);
            analytic.push(g.data()[k]);
            numeric.push((up - down) / (2.0 * h));
        }
    }
    assert!(
        analytic.iter().any(|g| g.abs() > 1e-9),
        "gradient vanished everywhere; the check would be vacuous"
    );
    relative(&analytic, &numeric)
}

pub fn relative(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(n).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()) + norm(&mut n.iter().copied());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Every entry of every listed parameter.
pub fn all(ids: impl IntoIterator<Item = ParamId>) -> Vec<(ParamId, Option<Vec<usize>>)> {
    ids.into_iter().map(|id| (id, None)).collect()
}

/// Up to `per_param` random entries of each parameter.
pub fn sampled(
    store: &ParamStore,
    ids: impl IntoIterator<Item = ParamId>,
    per_param: usize,
    seed: u64,
) -> Vec<(ParamId, Option<Vec<usize>>)> {
    let mut rng = stream_rng(seed, 11);
    ids.into_iter()
        .map(|id| {
            let len = store.value(id).len();
            let picks = if len <= per_param {
                (0..len).collect()
            } else {
                (0..per_param).map(|_| rng.random_range(0..len)).collect()
            };
            (id, Some(picks))
        })
        .collect()
}
