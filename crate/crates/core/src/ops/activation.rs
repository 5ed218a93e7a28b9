use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

/// Gradient of the sigmoid expressed through its forward output.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &s) in g.data_mut().iter_mut().zip(output.data()) {
        *gv *= s * (1.0 - s);
    }
    g
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err!("add of mismatched shapes {} and {}", a.shape(), b.shape()));
    }
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn relu_values() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 2.0, 0.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0, 0.0]);
        let g = relu_backward(&x, &Tensor::full(x.shape(), 1.0));
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn relu_all_negative() {
        let x = Tensor::full(Shape::new(2, 2, 2, 2), -0.3);
        assert!(relu(&x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(&Tensor::scalar(0.0)).data(), &[0.5]);
        let big = sigmoid(&Tensor::scalar(40.0)).data()[0];
        assert!(big <= 1.0 && big > 1.0 - 1e-6);
        let small = sigmoid(&Tensor::scalar(-800.0)).data()[0];
        assert!(small >= 0.0 && small.is_finite());
    }

    #[test]
    fn add_identities() {
        let a = Tensor::from_fn(Shape::new(1, 2, 2, 2), |_, c, y, x| (c + y) as f64 - x as f64 * 0.3);
        assert_eq!(add(&a, &Tensor::zeros(a.shape())).unwrap(), a);
        let neg = a.scale(-1.0);
        assert!(add(&a, &neg).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(add(&a, &Tensor::zeros(Shape::new(1, 1, 2, 2))).is_err());
    }
}
