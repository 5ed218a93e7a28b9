use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// 2x2 max pooling with stride 2.
///
/// The returned indices hold, per output cell, the winning window position
/// (0..4 in row-major order). Ties go to the earliest position.
pub fn maxpool_2x2(input: &Tensor) -> Result<(Tensor, Vec<u8>)> {
    let s = input.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(shape_err!("maxpool_2x2 needs even spatial dims, got {s}"));
    }
    let out_shape = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut indices = Vec::with_capacity(out_shape.numel());
    let src = input.data();
    for plane in 0..s.n * s.c {
        let base = plane * s.plane();
        for oy in 0..out_shape.h {
            for ox in 0..out_shape.w {
                let top = base + 2 * oy * s.w + 2 * ox;
                let window = [src[top], src[top + 1], src[top + s.w], src[top + s.w + 1]];
                let mut best = 0u8;
                for (i, &v) in window.iter().enumerate().skip(1) {
                    if v > window[best as usize] {
                        best = i as u8;
                    }
                }
                out.push(window[best as usize]);
                indices.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, indices))
}

/// Routes each upstream gradient entry to the window position that won the
/// forward pass.
pub fn maxpool_2x2_backward(grad_out: &Tensor, indices: &[u8], input_shape: Shape) -> Result<Tensor> {
    let os = grad_out.shape();
    if os != Shape::new(input_shape.n, input_shape.c, input_shape.h / 2, input_shape.w / 2)
        || indices.len() != os.numel()
    {
        return Err(shape_err!(
            "maxpool backward: gradient {os} does not match input {input_shape}"
        ));
    }
    let mut gin = Tensor::zeros(input_shape);
    let w = input_shape.w;
    let g = grad_out.data();
    let dst = gin.data_mut();
    let mut k = 0;
    for plane in 0..os.n * os.c {
        let base = plane * input_shape.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let idx = indices[k] as usize;
                let pos = base + (2 * oy + idx / 2) * w + 2 * ox + idx % 2;
                dst[pos] += g[k];
                k += 1;
            }
        }
    }
    Ok(gin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool_2x2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx, vec![3]);
    }

    #[test]
    fn ties_pick_first_cell() {
        let x = Tensor::full(Shape::new(1, 2, 4, 4), 0.25);
        let (y, idx) = maxpool_2x2(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
        assert!(idx.iter().all(|&i| i == 0));
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(maxpool_2x2(&Tensor::zeros(Shape::new(1, 1, 3, 4))).is_err());
        assert!(maxpool_2x2(&Tensor::zeros(Shape::new(1, 1, 4, 5))).is_err());
    }

    #[test]
    fn backward_hits_winners_only() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 4), vec![1.0, 5.0, 0.0, 0.0, 2.0, 3.0, 7.0, 0.0]).unwrap();
        let (_, idx) = maxpool_2x2(&x).unwrap();
        let g = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![10.0, 20.0]).unwrap();
        let gin = maxpool_2x2_backward(&g, &idx, x.shape()).unwrap();
        assert_eq!(gin.data(), &[0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 20.0, 0.0]);
    }
}
