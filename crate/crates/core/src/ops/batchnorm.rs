use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Values saved by a training-mode forward pass for the backward rule.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
}

fn check(s: Shape, gamma: &[f64], beta: &[f64]) -> Result<()> {
    if gamma.len() != s.c || beta.len() != s.c {
        return Err(shape_err!(
            "batchnorm affine lengths ({}, {}) do not match {} channels of {s}",
            gamma.len(),
            beta.len(),
            s.c
        ));
    }
    Ok(())
}

/// Normalizes each channel with statistics over N, H and W.
pub fn batchnorm_train(input: &Tensor, gamma: &[f64], beta: &[f64]) -> Result<(Tensor, BatchNormCache)> {
    let s = input.shape();
    check(s, gamma, beta)?;
    let count = (s.n * s.plane()) as f64;
    let plane = s.plane();
    let x = input.data();
    let mut mean = vec![0.0; s.c];
    let mut var = vec![0.0; s.c];
    for c in 0..s.c {
        let mut acc = 0.0;
        for n in 0..s.n {
            let base = (n * s.c + c) * plane;
            acc += x[base..base + plane].iter().sum::<f64>();
        }
        mean[c] = acc / count;
        let mut sq = 0.0;
        for n in 0..s.n {
            let base = (n * s.c + c) * plane;
            sq += x[base..base + plane].iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
        }
        var[c] = sq / count;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    {
        let xh = xhat.data_mut();
        let y = out.data_mut();
        for n in 0..s.n {
            for c in 0..s.c {
                let base = (n * s.c + c) * plane;
                for i in base..base + plane {
                    let v = (x[i] - mean[c]) * inv_std[c];
                    xh[i] = v;
                    y[i] = gamma[c] * v + beta[c];
                }
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Normalizes with fixed (running) statistics.
pub fn batchnorm_infer(input: &Tensor, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64]) -> Result<Tensor> {
    let s = input.shape();
    check(s, gamma, beta)?;
    check(s, mean, var)?;
    let plane = s.plane();
    let mut out = input.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let scale = gamma[c] / (var[c] + BN_EPS).sqrt();
            let base = (n * s.c + c) * plane;
            for v in &mut out.data_mut()[base..base + plane] {
                *v = (*v - mean[c]) * scale + beta[c];
            }
        }
    }
    Ok(out)
}

/// Returns `(d input, d gamma, d beta)` for a training-mode forward pass.
pub fn batchnorm_backward(
    grad_out: &Tensor,
    cache: &BatchNormCache,
    gamma: &[f64],
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let s = grad_out.shape();
    if s != cache.xhat.shape() {
        return Err(shape_err!(
            "batchnorm upstream gradient {s} does not match forward shape {}",
            cache.xhat.shape()
        ));
    }
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let g = grad_out.data();
    let xh = cache.xhat.data();
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            for i in base..base + plane {
                dbeta[c] += g[i];
                dgamma[c] += g[i] * xh[i];
            }
        }
    }
    let mut gin = Tensor::zeros(s);
    let dst = gin.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            let k = gamma[c] * cache.inv_std[c] / count;
            let base = (n * s.c + c) * plane;
            for i in base..base + plane {
                dst[i] = k * (count * g[i] - dbeta[c] - xh[i] * dgamma[c]);
            }
        }
    }
    Ok((gin, dgamma, dbeta))
}

/// Backward rule for [`batchnorm_infer`]: the statistics are constants.
pub fn batchnorm_infer_backward(
    input: &Tensor,
    grad_out: &Tensor,
    gamma: &[f64],
    mean: &[f64],
    var: &[f64],
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let s = input.shape();
    if grad_out.shape() != s {
        return Err(shape_err!("batchnorm gradient {} vs input {s}", grad_out.shape()));
    }
    let plane = s.plane();
    let x = input.data();
    let g = grad_out.data();
    let mut gin = Tensor::zeros(s);
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    let dst = gin.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            let inv = 1.0 / (var[c] + BN_EPS).sqrt();
            let base = (n * s.c + c) * plane;
            for i in base..base + plane {
                dst[i] = g[i] * gamma[c] * inv;
                dgamma[c] += g[i] * (x[i] - mean[c]) * inv;
                dbeta[c] += g[i];
            }
        }
    }
    Ok((gin, dgamma, dbeta))
}
