//! Hybrid cross-entropy + per-pixel soft-dice loss and its deep-supervision
//! sum.
//!
//! For each channel `c` and pixel `n` the loss accumulates
//! `y log p + 2 y p / (y^2 + p^2 + eps)` and returns the negated sum divided
//! by the number of pixels in the batch. Probabilities are clamped to
//! `[eps, 1 - eps]` first.
//!
//! A single-channel (binary) map is scored through its two-channel view
//! `(p, 1 - p)` against `(y, 1 - y)`, so background pixels contribute to the
//! cross-entropy term as well.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Clamp bound for probabilities and the dice denominator offset.
pub const LOSS_EPS: f64 = 1e-7;

#[inline]
fn clamp_prob(p: f64) -> (f64, bool) {
    if p < LOSS_EPS {
        (LOSS_EPS, false)
    } else if p > 1.0 - LOSS_EPS {
        (1.0 - LOSS_EPS, false)
    } else {
        (p, true)
    }
}

/// Per-element contribution `y log p + 2yp/(y^2+p^2+eps)` and its derivative
/// with respect to the unclamped `p` (zero where the clamp is active).
#[inline]
fn term(y: f64, p: f64) -> (f64, f64) {
    let (pc, inside) = clamp_prob(p);
    let denom = y * y + pc * pc + LOSS_EPS;
    let value = y * pc.ln() + 2.0 * y * pc / denom;
    if !inside {
        return (value, 0.0);
    }
    let d = y / pc + 2.0 * y * (y * y - pc * pc + LOSS_EPS) / (denom * denom);
    (value, d)
}

fn check(labels: &Tensor, probs: &Tensor) -> Result<()> {
    if labels.shape() != probs.shape() {
        return Err(shape_err!(
            "labels {} and probabilities {} differ in shape",
            labels.shape(),
            probs.shape()
        ));
    }
    Ok(())
}

fn pixel_count(t: &Tensor) -> f64 {
    let s = t.shape();
    (s.n * s.h * s.w) as f64
}

pub fn hybrid_loss(labels: &Tensor, probs: &Tensor) -> Result<f64> {
    check(labels, probs)?;
    let binary = probs.shape().c == 1;
    let mut acc = 0.0;
    for (&y, &p) in labels.data().iter().zip(probs.data()) {
        acc += term(y, p).0;
        if binary {
            acc += term(1.0 - y, 1.0 - p).0;
        }
    }
    Ok(-acc / pixel_count(probs))
}

/// Analytic gradient of [`hybrid_loss`] with respect to `probs`.
pub fn hybrid_loss_grad(labels: &Tensor, probs: &Tensor) -> Result<Tensor> {
    check(labels, probs)?;
    let binary = probs.shape().c == 1;
    let scale = -1.0 / pixel_count(probs);
    let mut g = Tensor::zeros(probs.shape());
    for ((gv, &y), &p) in g.data_mut().iter_mut().zip(labels.data()).zip(probs.data()) {
        let mut d = term(y, p).1;
        if binary {
            d -= term(1.0 - y, 1.0 - p).1;
        }
        *gv = scale * d;
    }
    Ok(g)
}

/// `sum_i weights[i] * hybrid_loss(labels, heads[i])`, summed in order.
pub fn total_loss(labels: &Tensor, heads: &[&Tensor], weights: &[f64]) -> Result<f64> {
    if heads.len() != weights.len() {
        return Err(shape_err!(
            "{} heads but {} supervision weights",
            heads.len(),
            weights.len()
        ));
    }
    let mut acc = 0.0;
    for (p, w) in heads.iter().zip(weights) {
        acc += w * hybrid_loss(labels, p)?;
    }
    Ok(acc)
}

/// Loss weights over `heads` depth heads: all ones under deep supervision,
/// otherwise only the deepest head counts.
pub fn supervision_weights(heads: usize, deep_supervision: bool) -> Vec<f64> {
    if deep_supervision {
        vec![1.0; heads]
    } else {
        let mut w = vec![0.0; heads];
        if let Some(last) = w.last_mut() {
            *last = 1.0;
        }
        w
    }
}
