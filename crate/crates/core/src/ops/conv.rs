use rayon::prelude::*;

use super::{gemm, Layout};
use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// Output extent of a convolution along one axis, or `None` when the kernel
/// does not fit.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// 1x1 kernels at stride 1 without padding read the input directly.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

fn geometry(input: Shape, weight: Shape, stride: usize, padding: usize) -> Result<Geometry> {
    if input.c != weight.c {
        return Err(shape_err!(
            "conv2d channel mismatch: input {input} has {} channels, weight {weight} expects {}",
            input.c,
            weight.c
        ));
    }
    if stride == 0 {
        return Err(shape_err!("conv2d stride must be at least 1"));
    }
    let ho = conv_output_dim(input.h, weight.h, stride, padding);
    let wo = conv_output_dim(input.w, weight.w, stride, padding);
    match (ho, wo) {
        (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok(Geometry {
            cin: input.c,
            h: input.h,
            w: input.w,
            kh: weight.h,
            kw: weight.w,
            stride,
            padding,
            ho,
            wo,
        }),
        _ => Err(shape_err!(
            "conv2d of input {input} with kernel {weight} (stride {stride}, padding {padding}) has an empty output"
        )),
    }
}

fn im2col(item: &[f64], g: &Geometry, cols: &mut [f64]) {
    let ncols = g.cols();
    for c in 0..g.cin {
        let plane = &item[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geometry, item: &mut [f64]) {
    let ncols = g.cols();
    for c in 0..g.cin {
        let plane = &mut item[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_bias(bias: Option<&[f64]>, cout: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != cout => Err(shape_err!(
            "bias has {} entries but the convolution has {cout} output channels",
            b.len()
        )),
        _ => Ok(()),
    }
}

/// 2-D cross-correlation of `input` (`N x Cin x H x W`) with `weight`
/// (`Cout x Cin x kh x kw`), zero padding on every side.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&[f64]>, stride: usize, padding: usize) -> Result<Tensor> {
    let ws = weight.shape();
    let g = geometry(input.shape(), ws, stride, padding)?;
    check_bias(bias, ws.n)?;
    let cout = ws.n;
    let (k, p) = (g.rows(), g.cols());
    let out_shape = Shape::new(input.shape().n, cout, g.ho, g.wo);
    let mut out = Tensor::zeros(out_shape);
    if out_shape.numel() == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(out_shape.item())
        .enumerate()
        .for_each(|(n, dst)| {
            let item = input.item(n);
            let owned;
            let cols: &[f64] = if g.is_pointwise() {
                item
            } else {
                let mut buf = vec![0.0; k * p];
                im2col(item, &g, &mut buf);
                owned = buf;
                &owned
            };
            gemm(
                cout,
                k,
                p,
                weight.data(),
                Layout::row_major(k),
                cols,
                Layout::row_major(p),
                0.0,
                dst,
            );
            if let Some(b) = bias {
                for (o, plane) in dst.chunks_mut(p).enumerate() {
                    plane.iter_mut().for_each(|v| *v += b[o]);
                }
            }
        });
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

/// Gradients of a [`conv2d`] call given the upstream gradient `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Conv2dGrads> {
    let is = input.shape();
    let ws = weight.shape();
    let g = geometry(is, ws, stride, padding)?;
    let cout = ws.n;
    let expected = Shape::new(is.n, cout, g.ho, g.wo);
    if grad_out.shape() != expected {
        return Err(shape_err!(
            "conv2d upstream gradient has shape {} but the output is {expected}",
            grad_out.shape()
        ));
    }
    let (k, p) = (g.rows(), g.cols());

    let partials: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..is.n)
        .into_par_iter()
        .map(|n| {
            let item = input.item(n);
            let gout = grad_out.item(n);
            let owned;
            let cols: &[f64] = if g.is_pointwise() {
                item
            } else {
                let mut buf = vec![0.0; k * p];
                im2col(item, &g, &mut buf);
                owned = buf;
                &owned
            };
            let mut gw = vec![0.0; cout * k];
            gemm(
                cout,
                p,
                k,
                gout,
                Layout::row_major(p),
                cols,
                Layout::transposed(p),
                0.0,
                &mut gw,
            );
            let gb: Vec<f64> = gout.chunks(p).map(|plane| plane.iter().sum()).collect();
            let mut gcols = vec![0.0; k * p];
            gemm(
                k,
                cout,
                p,
                weight.data(),
                Layout::transposed(k),
                gout,
                Layout::row_major(p),
                0.0,
                &mut gcols,
            );
            let gin = if g.is_pointwise() {
                gcols
            } else {
                let mut gin = vec![0.0; is.item()];
                col2im(&gcols, &g, &mut gin);
                gin
            };
            (gin, gw, gb)
        })
        .collect();

    let mut gin = Vec::with_capacity(is.numel());
    let mut gw = vec![0.0; ws.numel()];
    let mut gb = vec![0.0; cout];
    for (pi, pw, pb) in partials {
        gin.extend_from_slice(&pi);
        gw.iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
        gb.iter_mut().zip(&pb).for_each(|(a, b)| *a += b);
    }
    Ok(Conv2dGrads {
        input: Tensor::from_vec(is, gin)?,
        weight: Tensor::from_vec(ws, gw)?,
        bias: gb,
    })
}
