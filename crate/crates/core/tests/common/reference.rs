//! Brute-force definitions the optimised kernels are compared against.

#![allow(clippy::needless_range_loop)]

use r2upp_core::data::{GrayImage, PatchGrid};
use r2upp_core::{Shape, Tensor};

pub fn conv2d(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let ho = (xs.h + 2 * pad - ws.h) / stride + 1;
    let wo = (xs.w + 2 * pad - ws.w) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, ho, wo));
    for n in 0..xs.n {
        for o in 0..ws.n {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b[o];
                    for c in 0..xs.c {
                        for a in 0..ws.h {
                            for d in 0..ws.w {
                                let y = (i * stride + a) as isize - pad as isize;
                                let z = (j * stride + d) as isize - pad as isize;
                                if y >= 0 && z >= 0 && (y as usize) < xs.h && (z as usize) < xs.w {
                                    acc += x.at(n, c, y as usize, z as usize) * w.at(o, c, a, d);
                                }
                            }
                        }
                    }
                    out.set(n, o, i, j, acc);
                }
            }
        }
    }
    out
}

pub fn maxpool(x: &Tensor) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.h / 2, s.w / 2), |n, c, i, j| {
        [(0, 0), (0, 1), (1, 0), (1, 1)]
            .iter()
            .map(|&(a, d)| x.at(n, c, 2 * i + a, 2 * j + d))
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Each input pixel scatters its channel-weighted 2x2 kernel into its
/// output block, plus the bias.
pub fn upsample(x: &Tensor, w: &Tensor, b: &[f64]) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.c, 2 * xs.h, 2 * xs.w));
    for n in 0..xs.n {
        for o in 0..ws.c {
            for y in 0..2 * xs.h {
                for z in 0..2 * xs.w {
                    let v: f64 = (0..xs.c)
                        .map(|c| x.at(n, c, y / 2, z / 2) * w.at(c, o, y % 2, z % 2))
                        .sum();
                    out.set(n, o, y, z, v + b[o]);
                }
            }
        }
    }
    out
}

/// `(tp, tn, fp, fn)` counted pixel by pixel.
pub fn confusion(gt: &[f64], pred: &[f64]) -> (usize, usize, usize, usize) {
    let count = |a: f64, b: f64| gt.iter().zip(pred).filter(|&(&g, &p)| g == a && p == b).count();
    (count(1.0, 1.0), count(0.0, 0.0), count(0.0, 1.0), count(1.0, 0.0))
}

/// Per-pixel mean over the patches covering it, and whether any did.
pub fn stitch(preds: &[GrayImage], grid: &PatchGrid) -> (Vec<f64>, Vec<bool>) {
    let (h, w) = grid.source_shape;
    let k = grid.patch_size;
    let mut values = Vec::with_capacity(h * w);
    let mut covered = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let hits: Vec<f64> = grid
                .anchors
                .iter()
                .zip(preds)
                .filter(|(&(r, c), _)| (r..r + k).contains(&y) && (c..c + k).contains(&x))
                .map(|(&(r, c), p)| p.at(y - r, x - c))
                .collect();
            covered.push(!hits.is_empty());
            values.push(if hits.is_empty() {
                0.0
            } else {
                hits.iter().sum::<f64>() / hits.len() as f64
            });
        }
    }
    (values, covered)
}
