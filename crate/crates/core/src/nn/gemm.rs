//! Bounds-checked row-major matrix products on top of `Scalar::gemm_raw`.

use super::Scalar;

#[allow(clippy::too_many_arguments)]
pub(super) fn check(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    a_strides: (usize, usize),
    b_len: usize,
    b_strides: (usize, usize),
    c_len: usize,
    c_strides: (usize, usize),
) {
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(last(m, k, a_strides) <= a_len, "gemm: lhs out of bounds");
    assert!(last(k, n, b_strides) <= b_len, "gemm: rhs out of bounds");
    assert!(last(m, n, c_strides) <= c_len, "gemm: output out of bounds");
}

/// `c[m×n] = a[m×k] · b[k×n] + beta·c`
pub(crate) fn nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm_raw(m, k, n, a, (k, 1), b, (n, 1), beta, c, (n, 1));
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ + beta·c`
pub(crate) fn nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm_raw(m, k, n, a, (k, 1), b, (1, k), beta, c, (n, 1));
}

/// `c[m×n] = a[k×m]ᵀ · b[k×n] + beta·c`
pub(crate) fn tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    T::gemm_raw(m, k, n, a, (1, m), b, (n, 1), beta, c, (n, 1));
}
