#![allow(dead_code)]

pub mod reference;

use std::sync::Arc;

use r2upp_core::autodiff::{Tape, Var};
use r2upp_core::param::{BufferStore, ParamStore};
use r2upp_core::{Shape, Tensor};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Step used instead when the `FD_STEP` stencil straddles a relu kink.
pub const FD_FINE_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: Shape, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, r)
}

/// Uniform values with magnitude in `[0.1, 1]`, away from relu's kink.
pub fn away_from_zero(shape: Shape, r: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let m: f64 = r.random_range(0.1..1.0);
        *v = if r.random_bool(0.5) { m } else { -m };
    }
    t
}

/// Gradients smaller than this are round-off, e.g. a conv bias feeding a
/// training-mode batchnorm.
pub const VANISHING: f64 = 1e-8;

/// `||a - b|| / max(||a||, ||b||)`, zero when both vectors vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < VANISHING {
        return 0.0;
    }
    norm(&diff) / scale
}

/// Central difference of `f` (evaluated at an offset from the current
/// point). If the estimate at `FD_STEP` disagrees with the one at
/// `FD_FINE_STEP`, the function is not smooth across the wider stencil and
/// the finer estimate is returned.
pub fn central_difference(mut f: impl FnMut(f64) -> f64) -> f64 {
    let mut at = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    let coarse = at(FD_STEP);
    let fine = at(FD_FINE_STEP);
    let scale = coarse.abs().max(fine.abs()).max(1e-6);
    if (coarse - fine).abs() <= 1e-5 * scale {
        coarse
    } else {
        fine
    }
}

/// Builds a scalar loss from leaf inputs on a tape.
pub type LossFn<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

/// Analytic gradient of `f` with respect to each input, and the central
/// finite-difference estimate of it.
pub fn leaf_gradients(inputs: &[Tensor], f: &LossFn<'_>) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars);
    let grads = tape.backward(root).unwrap();
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = f(&mut tape, &vars);
        tape.value(root).to_scalar().unwrap()
    };
    let mut out = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .map_or_else(|| vec![0.0; inputs[i].numel()], |g| g.data().to_vec());
        let mut numeric = Vec::with_capacity(inputs[i].numel());
        let mut xs = inputs.to_vec();
        for k in 0..inputs[i].numel() {
            let orig = xs[i].data()[k];
            numeric.push(central_difference(|h| {
                xs[i].data_mut()[k] = orig + h;
                let v = eval(&xs);
                xs[i].data_mut()[k] = orig;
                v
            }));
        }
        out.push((analytic, numeric));
    }
    out
}

/// Worst relative error over all inputs of `f`.
pub fn max_leaf_error(inputs: &[Tensor], f: &LossFn<'_>) -> f64 {
    leaf_gradients(inputs, f)
        .iter()
        .map(|(a, n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Random projection `<coeffs, x>` as a scalar loss.
pub fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).shape();
    let coeffs = randn(shape, &mut rng(seed));
    tape.dot(x, Arc::new(coeffs)).unwrap()
}

/// Compares parameter gradients from one backward pass of `loss` against
/// central differences on at most `per_param` coordinates of every
/// parameter of `model`. Returns the worst relative error and the name of
/// the parameter it occurred in.
pub fn param_gradient_error<M>(
    model: &mut M,
    store: fn(&mut M) -> &mut ParamStore,
    per_param: usize,
    loss: &dyn Fn(&M, &mut Tape) -> Var,
) -> (f64, String) {
    store(model).zero_grad();
    let mut tape = Tape::new();
    let root = loss(model, &mut tape);
    let grads = tape.backward(root).unwrap();
    grads.accumulate_into(store(model)).unwrap();
    drop(tape);
    let eval = |m: &M| {
        let mut tape = Tape::new();
        let root = loss(m, &mut tape);
        tape.value(root).to_scalar().unwrap()
    };
    let names: Vec<String> = store(model).iter().map(|p| p.name.clone()).collect();
    let mut worst = (0.0, String::new());
    for name in names {
        let id = store(model).id(&name).unwrap();
        let n = store(model).get(id).numel();
        let step = (n / per_param).max(1);
        let coords: Vec<usize> = (0..n).step_by(step).take(per_param).collect();
        let analytic: Vec<f64> = coords.iter().map(|&k| store(model).get(id).grad.data()[k]).collect();
        let mut numeric = Vec::with_capacity(coords.len());
        for &k in &coords {
            let base = (*store(model).get(id).value).clone();
            numeric.push(central_difference(|h| {
                let mut t = base.clone();
                t.data_mut()[k] += h;
                store(model).set_value(id, t).unwrap();
                let v = eval(model);
                store(model).set_value(id, base.clone()).unwrap();
                v
            }));
        }
        let e = rel_err(&analytic, &numeric);
        if e > worst.0 {
            worst = (e, name);
        }
    }
    worst
}

/// Replaces every parameter and running statistic with random values so
/// that identity-like initial states cannot hide wiring mistakes.
pub fn scramble(params: &mut ParamStore, buffers: &mut BufferStore, seed: u64) {
    let mut r = rng(seed);
    for p in params.iter_mut() {
        let (lo, hi) = if p.name.ends_with("gamma") {
            (0.5, 1.5)
        } else {
            (-0.5, 0.5)
        };
        p.value = Arc::new(Tensor::uniform(p.value.shape(), lo, hi, &mut r));
    }
    for s in buffers.iter_mut() {
        for m in &mut s.mean {
            *m = r.random_range(-0.3..0.3);
        }
        for v in &mut s.var {
            *v = r.random_range(0.5..2.0);
        }
    }
}
