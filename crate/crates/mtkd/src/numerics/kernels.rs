//! Dense kernels behind conv2d.
//!
//! All loops run in a fixed order so results are bit-identical between runs.
//! The AXPY-style GEMM keeps per-element accumulation sequential in `k`
//! while letting LLVM vectorize across the row, which preserves determinism
//! and still saturates FMA units.

use super::scalar::Scalar;

/// `c[m x n] += a[m x k] * b[k x n]`, all row-major.
pub fn gemm_accum<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv = aik.mul_add(*bv, *cv);
            }
        }
    }
}

/// Dot product with a fixed 8-accumulator reduction tree.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::ZERO; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let rem_a = chunks_a.remainder();
    let rem_b = chunks_b.remainder();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for lane in 0..8 {
            acc[lane] = ca[lane].mul_add(cb[lane], acc[lane]);
        }
    }
    let mut tail = T::ZERO;
    for (x, y) in rem_a.iter().zip(rem_b.iter()) {
        tail = x.mul_add(*y, tail);
    }
    let s0 = acc[0] + acc[4];
    let s1 = acc[1] + acc[5];
    let s2 = acc[2] + acc[6];
    let s3 = acc[3] + acc[7];
    ((s0 + s1) + (s2 + s3)) + tail
}

/// Unfold one image `[c x h x w]` into columns `[c*kh*kw x oh*ow]`.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    debug_assert_eq!(cols.len(), c * kh * kw * oh * ow);
    let out_spatial = oh * ow;
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * out_spatial;
                for oi in 0..oh {
                    let ih = (oi * stride + ki) as isize - pad as isize;
                    let dst = &mut cols[row + oi * ow..row + (oi + 1) * ow];
                    if ih < 0 || ih >= h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src_row = &plane[ih as usize * w..(ih as usize + 1) * w];
                    for (oj, d) in dst.iter_mut().enumerate() {
                        let iw = (oj * stride + kj) as isize - pad as isize;
                        *d = if iw < 0 || iw >= w as isize {
                            T::ZERO
                        } else {
                            src_row[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add columns back into an image gradient; inverse of [`im2col`].
#[allow(clippy::too_many_arguments)]
pub fn col2im_accum<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    grad_input: &mut [T],
) {
    debug_assert_eq!(cols.len(), c * kh * kw * oh * ow);
    debug_assert_eq!(grad_input.len(), c * h * w);
    let out_spatial = oh * ow;
    for ci in 0..c {
        let plane = &mut grad_input[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * out_spatial;
                for oi in 0..oh {
                    let ih = (oi * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oi * ow..row + (oi + 1) * ow];
                    let dst_row = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                    for (oj, s) in src.iter().enumerate() {
                        let iw = (oj * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dst_row[iw as usize] += *s;
                        }
                    }
                }
            }
        }
    }
}
