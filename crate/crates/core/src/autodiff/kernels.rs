//! Dense inner loops shared by forward and backward rules.
//!
//! All reductions use a fixed accumulation order so results are
//! bitwise reproducible run to run.

use crate::tensor::Real;

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [F::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let xa = &a[c * 8..c * 8 + 8];
        let xb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[n, :] (+)= x[n, :] · w` for `x: n×i`, `w: i×o`.
pub fn matmul<F: Real>(x: &[F], w: &[F], out: &mut [F], inner: usize, cols: usize) {
    if inner == 0 || cols == 0 {
        return;
    }
    for (xr, or) in x.chunks(inner).zip(out.chunks_mut(cols)) {
        for (i, &xv) in xr.iter().enumerate() {
            if xv != F::zero() {
                axpy(xv, &w[i * cols..(i + 1) * cols], or);
            }
        }
    }
}

/// `dw += xᵀ · g` for `x: n×i`, `g: n×o`.
pub fn matmul_grad_w<F: Real>(x: &[F], g: &[F], dw: &mut [F], inner: usize, cols: usize) {
    if inner == 0 || cols == 0 {
        return;
    }
    for (xr, gr) in x.chunks(inner).zip(g.chunks(cols)) {
        for (i, &xv) in xr.iter().enumerate() {
            if xv != F::zero() {
                axpy(xv, gr, &mut dw[i * cols..(i + 1) * cols]);
            }
        }
    }
}

/// `dx += g · wᵀ` for `g: n×o`, `w: i×o`.
pub fn matmul_grad_x<F: Real>(g: &[F], w: &[F], dx: &mut [F], inner: usize, cols: usize) {
    if inner == 0 || cols == 0 {
        return;
    }
    for (gr, dr) in g.chunks(cols).zip(dx.chunks_mut(inner)) {
        for (i, d) in dr.iter_mut().enumerate() {
            *d += dot(gr, &w[i * cols..(i + 1) * cols]);
        }
    }
}

/// Left/right zero padding giving a same-length output for kernel length `k`.
pub fn same_padding(k: usize) -> (usize, usize) {
    let left = k / 2;
    (left, k - 1 - left)
}

/// Copy `x` into `buf` with `left` leading zeros and trailing zeros up to
/// `buf.len()`.
pub fn pad_into<F: Real>(x: &[F], left: usize, buf: &mut [F]) {
    buf.fill(F::zero());
    buf[left..left + x.len()].copy_from_slice(x);
}

/// Same-length cross-correlation of one signal with a bank of kernels.
///
/// `xpad` is the padded signal (length `len + k - 1`), `w` is `filters×k`,
/// `out` is `filters×len`.
pub fn conv_same_row<F: Real>(xpad: &[F], w: &[F], b: &[F], k: usize, len: usize, out: &mut [F]) {
    for ((orow, wrow), &bias) in out.chunks_mut(len).zip(w.chunks(k)).zip(b) {
        orow.fill(bias);
        for (j, &wj) in wrow.iter().enumerate() {
            axpy(wj, &xpad[j..j + len], orow);
        }
    }
}
