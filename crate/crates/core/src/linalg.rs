//! Row-major matrix kernels with a fixed loop nest.
//!
//! The accumulation order is part of the contract: every kernel sums over
//! the contracted index in increasing order, so serial and parallel callers
//! obtain bitwise identical results.

use crate::scalar::Scalar;

/// `c += a · b` with `a: m×k`, `b: k×n`, `c: m×n`. Returns the number of
/// scalar multiplications performed.
pub fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) -> u64 {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    (m * k * n) as u64
}

pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    gemm_acc(a, b, &mut c, m, k, n);
    c
}

/// `aᵀ · b` with `a: k×m`, `b: k×n`.
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    matmul(&transpose(a, k, m), b, m, k, n)
}

/// `a · bᵀ` with `a: m×k`, `b: n×k`.
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    matmul(a, &transpose(b, n, k), m, k, n)
}

pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Largest absolute entrywise difference divided by the largest absolute
/// reference entry.
pub fn max_rel_diff<T: Scalar>(got: &[T], want: &[T]) -> f64 {
    assert_eq!(got.len(), want.len(), "length mismatch");
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
    let diff = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (g, w)| m.max((g.as_f64() - w.as_f64()).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
