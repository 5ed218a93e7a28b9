use rayon::prelude::*;

use super::{gemm, Layout};
use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

fn check(input: Shape, weight: Shape) -> Result<usize> {
    if weight.h != 2 || weight.w != 2 {
        return Err(shape_err!("upsample_2x expects a [in, out, 2, 2] weight, got {weight}"));
    }
    if weight.n != input.c {
        return Err(shape_err!(
            "upsample_2x channel mismatch: input {input} has {} channels, weight {weight} expects {}",
            input.c,
            weight.n
        ));
    }
    Ok(weight.c)
}

/// Learned 2x up-sampling: a transposed convolution with a 2x2 kernel and
/// stride 2. `weight` is laid out `[in, out, 2, 2]`.
pub fn upsample_2x(input: &Tensor, weight: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    let is = input.shape();
    let cout = check(is, weight.shape())?;
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(shape_err!("upsample bias has {} entries, expected {cout}", b.len()));
        }
    }
    let hw = is.plane();
    let out_shape = Shape::new(is.n, cout, 2 * is.h, 2 * is.w);
    let mut out = Tensor::zeros(out_shape);
    if out_shape.numel() == 0 {
        return Ok(out);
    }
    let wo = out_shape.w;
    out.data_mut()
        .par_chunks_mut(out_shape.item())
        .enumerate()
        .for_each(|(n, dst)| {
            // z[(o*4 + a*2 + b), (i*w + j)] = sum_c weight[c, o, a, b] * x[c, i, j]
            let mut z = vec![0.0; cout * 4 * hw];
            gemm(
                cout * 4,
                is.c,
                hw,
                weight.data(),
                Layout::transposed(cout * 4),
                input.item(n),
                Layout::row_major(hw),
                0.0,
                &mut z,
            );
            for o in 0..cout {
                let b = bias.map_or(0.0, |b| b[o]);
                let plane = &mut dst[o * out_shape.plane()..(o + 1) * out_shape.plane()];
                for ab in 0..4 {
                    let (a, bb) = (ab / 2, ab % 2);
                    let row = &z[(o * 4 + ab) * hw..(o * 4 + ab + 1) * hw];
                    for i in 0..is.h {
                        for j in 0..is.w {
                            plane[(2 * i + a) * wo + 2 * j + bb] = row[i * is.w + j] + b;
                        }
                    }
                }
            }
        });
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct UpsampleGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

pub fn upsample_2x_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<UpsampleGrads> {
    let is = input.shape();
    let ws = weight.shape();
    let cout = check(is, ws)?;
    let os = Shape::new(is.n, cout, 2 * is.h, 2 * is.w);
    if grad_out.shape() != os {
        return Err(shape_err!(
            "upsample upstream gradient has shape {} but the output is {os}",
            grad_out.shape()
        ));
    }
    let hw = is.plane();
    let partials: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..is.n)
        .into_par_iter()
        .map(|n| {
            let g = grad_out.item(n);
            let mut gz = vec![0.0; cout * 4 * hw];
            let mut gb = vec![0.0; cout];
            for o in 0..cout {
                let plane = &g[o * os.plane()..(o + 1) * os.plane()];
                gb[o] = plane.iter().sum();
                for ab in 0..4 {
                    let (a, bb) = (ab / 2, ab % 2);
                    let row = &mut gz[(o * 4 + ab) * hw..(o * 4 + ab + 1) * hw];
                    for i in 0..is.h {
                        for j in 0..is.w {
                            row[i * is.w + j] = plane[(2 * i + a) * os.w + 2 * j + bb];
                        }
                    }
                }
            }
            let mut gin = vec![0.0; is.item()];
            gemm(
                is.c,
                cout * 4,
                hw,
                weight.data(),
                Layout::row_major(cout * 4),
                &gz,
                Layout::row_major(hw),
                0.0,
                &mut gin,
            );
            let mut gw = vec![0.0; ws.numel()];
            gemm(
                is.c,
                hw,
                cout * 4,
                input.item(n),
                Layout::row_major(hw),
                &gz,
                Layout::transposed(hw),
                0.0,
                &mut gw,
            );
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
    Ok(UpsampleGrads {
        input: Tensor::from_vec(is, gin)?,
        weight: Tensor::from_vec(ws, gw)?,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_weight_replicates_value() {
        let x = Tensor::scalar(1.75);
        let w = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        let y = upsample_2x(&x, &w, None).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|&v| v == 1.75));
    }

    #[test]
    fn zero_weight_gives_zero() {
        let x = Tensor::from_fn(Shape::new(2, 3, 2, 3), |n, c, y, x| (n + c + y + x) as f64);
        let w = Tensor::zeros(Shape::new(3, 4, 2, 2));
        let y = upsample_2x(&x, &w, None).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 4, 4, 6));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::zeros(Shape::new(1, 2, 2, 2));
        let w = Tensor::zeros(Shape::new(3, 1, 2, 2));
        assert!(upsample_2x(&x, &w, None).is_err());
    }
}
