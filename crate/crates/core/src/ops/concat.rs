use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// Concatenates along the channel axis, in argument order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| shape_err!("concat_channels needs at least one input"))?
        .shape();
    let mut c_total = 0;
    for (i, t) in inputs.iter().enumerate() {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(shape_err!(
                "concat_channels input {i} has shape {s}, incompatible with input 0 shape {first}"
            ));
        }
        c_total += s.c;
    }
    let out_shape = Shape::new(first.n, c_total, first.h, first.w);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for t in inputs {
            data.extend_from_slice(t.item(n));
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Inverse of [`concat_channels`]: splits `input` into consecutive channel
/// groups of the given sizes.
pub fn split_channels(input: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let total: usize = sizes.iter().sum();
    if total != input.shape().c {
        return Err(shape_err!(
            "split sizes sum to {total} but the input {} has {} channels",
            input.shape(),
            input.shape().c
        ));
    }
    let mut start = 0;
    let mut parts = Vec::with_capacity(sizes.len());
    for &len in sizes {
        parts.push(input.channel_slice(start, len)?);
        start += len;
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_input_is_identity() {
        let a = Tensor::from_fn(Shape::new(2, 3, 2, 2), |n, c, y, x| (n * 8 + c * 4 + y * 2 + x) as f64);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn channel_placement() {
        let a = Tensor::full(Shape::new(1, 3, 2, 2), 1.0);
        let b = Tensor::full(Shape::new(1, 5, 2, 2), 2.0);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape().c, 8);
        for ch in 0..8 {
            let want = if ch < 3 { 1.0 } else { 2.0 };
            assert_eq!(c.at(0, ch, 1, 0), want);
        }
    }

    #[test]
    fn mismatch_names_offending_input() {
        let a = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let b = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let c = Tensor::zeros(Shape::new(1, 1, 2, 4));
        let msg = concat_channels(&[&a, &b, &c]).unwrap_err().to_string();
        assert!(msg.contains("input 2"), "{msg}");
    }
}
