//! Dense batched fields, periodic convolution and parameter generation.

mod conv;
mod field;
mod rng;

pub(crate) use conv::conv_linear;
pub use conv::{conv_periodic, he_init_conv, receptive_field, ConvParams, RFMatrix};
pub use field::BatchedField;
pub use rng::SeedStream;

/// Row-major `c = a * b` with `a: m x k`, `b: k x n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: slice lengths match the declared dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-major `c = a^T * a` for `a: rows x cols`.
pub(crate) fn gram(rows: usize, cols: usize, a: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(c.len(), cols * cols);
    // SAFETY: a^T is addressed with swapped strides over the same buffer.
    unsafe {
        matrixmultiply::dgemm(
            cols,
            rows,
            cols,
            1.0,
            a.as_ptr(),
            1,
            cols as isize,
            a.as_ptr(),
            cols as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
}
