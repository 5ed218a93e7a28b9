//! Forward and backward rules for every primitive the network uses.
//!
//! Each primitive is a pure function of its inputs. Backward rules take the
//! forward inputs (plus whatever the forward pass saved) and the upstream
//! gradient, and return gradients for every differentiable input. Batch items
//! are processed in parallel; per-item partial sums are reduced in batch
//! order so results do not depend on the worker count.

mod activation;
mod batchnorm;
mod concat;
mod conv;
mod pool;
mod upsample;

pub use activation::{add, relu, relu_backward, sigmoid, sigmoid_backward};
pub use batchnorm::{
    batchnorm_backward, batchnorm_infer, batchnorm_infer_backward, batchnorm_train, BatchNormCache, BN_EPS, BN_MOMENTUM,
};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_backward, conv_output_dim, Conv2dGrads};
pub use pool::{maxpool_2x2, maxpool_2x2_backward};
pub use upsample::{upsample_2x, upsample_2x_backward, UpsampleGrads};

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    rs: isize,
    cs: isize,
}

impl Layout {
    /// Row-major `rows x cols`.
    pub(crate) fn row_major(cols: usize) -> Self {
        Layout {
            rs: cols as isize,
            cs: 1,
        }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    pub(crate) fn transposed(cols: usize) -> Self {
        Layout {
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c = a * b + beta * c` for an `m x k` by `k x n` product.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: operand extents are asserted above and every layout passed in
    // addresses elements strictly inside an `m*k`, `k*n` or `m*n` block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rs,
            la.cs,
            b.as_ptr(),
            lb.rs,
            lb.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(f64::from).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| f64::from(v) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, &a, Layout::row_major(3), &b, Layout::row_major(4), 0.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
        // a^T is 3x2; (a^T)^T * ... check the transposed layout path.
        let mut d = vec![0.0; 4];
        gemm(
            2,
            3,
            2,
            &a,
            Layout::row_major(3),
            &a,
            Layout::transposed(3),
            0.0,
            &mut d,
        );
        assert_eq!(d, vec![5.0, 14.0, 14.0, 50.0]);
    }
}
