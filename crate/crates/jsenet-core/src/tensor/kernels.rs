//! Raw slice kernels shared by the graph ops and plain (untracked) code.

use alloc::vec;
use alloc::vec::Vec;

use crate::Real;

/// c += a @ b with a: m×k, b: k×n (row-major).
pub fn matmul(a: &[Real], b: &[Real], c: &mut [Real], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (l, &a_il) in a_row.iter().enumerate() {
            if a_il == 0.0 {
                continue;
            }
            let b_row = &b[l * n..(l + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_il * b_v;
            }
        }
    }
}

/// c += a @ bᵀ with a: m×k, b: n×k.
pub fn matmul_nt(a: &[Real], b: &[Real], c: &mut [Real], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

/// c += aᵀ @ b with a: m×k, b: m×n, c: k×n.
pub fn matmul_tn(a: &[Real], b: &[Real], c: &mut [Real], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (l, &a_il) in a_row.iter().enumerate() {
            if a_il == 0.0 {
                continue;
            }
            let c_row = &mut c[l * n..(l + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_il * b_v;
            }
        }
    }
}

/// Numerically stable row-wise softmax, in place.
pub fn softmax_rows_inplace(x: &mut [Real], rows: usize, cols: usize) {
    debug_assert_eq!(x.len(), rows * cols);
    for r in 0..rows {
        let row = &mut x[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = crate::math::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Per-channel mean and biased variance over the rows of an n×c matrix.
pub fn channel_stats(x: &[Real], n: usize, c: usize) -> (Vec<Real>, Vec<Real>) {
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(&x[r * c..(r + 1) * c]) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as Real;
    }
    for r in 0..n {
        for j in 0..c {
            let d = x[r * c + j] - mean[j];
            var[j] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v /= n as Real;
    }
    (mean, var)
}
