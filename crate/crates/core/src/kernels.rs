//! Low-level numeric kernels shared by the model's forward and backward
//! passes.
//!
//! Everything is written as row-wise AXPY accumulation over contiguous
//! slices: each inner loop updates independent output elements, which lets
//! the compiler vectorize without reassociating float sums. Activations use
//! the same HWC layout as [`crate::image::Image`], so convolutions become
//! `out[s, :] += patch[s, k] * w_t[k, :]` over an im2row matrix.

use crate::real::Real;
use alloc::vec;
use alloc::vec::Vec;

/// `out[r, 0..n] += sum_k a[r, k] * b_t[k, 0..n]` for every row `r`.
///
/// `a` is `rows x k_len` row-major, `b_t` is `k_len x n` row-major, `out` is
/// `rows x n` row-major and is accumulated into (callers pre-fill it with
/// bias or zeros). The common activation widths get register-blocked
/// kernels; everything else takes the dynamic path.
pub fn matmul_acc<R: Real>(a: &[R], rows: usize, k_len: usize, b_t: &[R], n: usize, out: &mut [R]) {
    debug_assert_eq!(a.len(), rows * k_len);
    debug_assert_eq!(b_t.len(), k_len * n);
    debug_assert_eq!(out.len(), rows * n);
    match n {
        16 => matmul_block::<R, 16, 4>(a, rows, k_len, b_t, out),
        32 => matmul_block::<R, 32, 4>(a, rows, k_len, b_t, out),
        64 => matmul_block::<R, 64, 2>(a, rows, k_len, b_t, out),
        _ => matmul_dyn(a, rows, k_len, b_t, n, out),
    }
}

/// Register-blocked kernel for compile-time row width `N`, processing `RB`
/// rows per block so the accumulators stay in registers across the k loop.
fn matmul_block<R: Real, const N: usize, const RB: usize>(
    a: &[R],
    rows: usize,
    k_len: usize,
    b_t: &[R],
    out: &mut [R],
) {
    let mut r = 0;
    while r + RB <= rows {
        let mut acc = [[R::ZERO; N]; RB];
        for (i, accr) in acc.iter_mut().enumerate() {
            accr.copy_from_slice(&out[(r + i) * N..(r + i + 1) * N]);
        }
        let a_block = &a[r * k_len..(r + RB) * k_len];
        for k in 0..k_len {
            let w = &b_t[k * N..k * N + N];
            for i in 0..RB {
                let c = a_block[i * k_len + k];
                for j in 0..N {
                    acc[i][j] = c.mul_add_fast(w[j], acc[i][j]);
                }
            }
        }
        for (i, accr) in acc.iter().enumerate() {
            out[(r + i) * N..(r + i + 1) * N].copy_from_slice(accr);
        }
        r += RB;
    }
    while r < rows {
        let mut acc = [R::ZERO; N];
        acc.copy_from_slice(&out[r * N..r * N + N]);
        let ar = &a[r * k_len..(r + 1) * k_len];
        for k in 0..k_len {
            let c = ar[k];
            let w = &b_t[k * N..k * N + N];
            for j in 0..N {
                acc[j] = c.mul_add_fast(w[j], acc[j]);
            }
        }
        out[r * N..r * N + N].copy_from_slice(&acc);
        r += 1;
    }
}

fn matmul_dyn<R: Real>(a: &[R], rows: usize, k_len: usize, b_t: &[R], n: usize, out: &mut [R]) {
    let mut r = 0;
    while r + 4 <= rows {
        let (o0, rest) = out[r * n..(r + 4) * n].split_at_mut(n);
        let (o1, rest) = rest.split_at_mut(n);
        let (o2, o3) = rest.split_at_mut(n);
        let a0 = &a[r * k_len..(r + 1) * k_len];
        let a1 = &a[(r + 1) * k_len..(r + 2) * k_len];
        let a2 = &a[(r + 2) * k_len..(r + 3) * k_len];
        let a3 = &a[(r + 3) * k_len..(r + 4) * k_len];
        for k in 0..k_len {
            let w = &b_t[k * n..k * n + n];
            let (c0, c1, c2, c3) = (a0[k], a1[k], a2[k], a3[k]);
            for j in 0..n {
                o0[j] = c0.mul_add_fast(w[j], o0[j]);
                o1[j] = c1.mul_add_fast(w[j], o1[j]);
                o2[j] = c2.mul_add_fast(w[j], o2[j]);
                o3[j] = c3.mul_add_fast(w[j], o3[j]);
            }
        }
        r += 4;
    }
    while r < rows {
        let o = &mut out[r * n..r * n + n];
        let ar = &a[r * k_len..(r + 1) * k_len];
        for k in 0..k_len {
            let c = ar[k];
            let w = &b_t[k * n..k * n + n];
            for j in 0..n {
                o[j] = c.mul_add_fast(w[j], o[j]);
            }
        }
        r += 1;
    }
}

/// Transpose an `rows x cols` row-major matrix into `cols x rows`.
pub fn transpose<R: Real>(m: &[R], rows: usize, cols: usize, out: &mut [R]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
}

/// Geometry of one 3x3 / stride-2 / pad-1 convolution stage.
#[derive(Clone, Copy, Debug)]
pub struct ConvShape {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_c: usize,
}

impl ConvShape {
    pub const KSIZE: usize = 3;
    pub const STRIDE: usize = 2;
    pub const PAD: usize = 1;

    #[inline]
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * Self::PAD - Self::KSIZE) / Self::STRIDE + 1
    }

    #[inline]
    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * Self::PAD - Self::KSIZE) / Self::STRIDE + 1
    }

    /// Spatial positions in the output.
    #[inline]
    pub fn spatial(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// im2row width: kernel taps x input channels.
    #[inline]
    pub fn k_len(&self) -> usize {
        Self::KSIZE * Self::KSIZE * self.in_c
    }
}

/// Expand an HWC input into the `spatial x k_len` im2row matrix. Column
/// order is `(ky, kx, ic)` so each kernel tap contributes a contiguous
/// channel run; out-of-bounds taps are zero (padding).
pub fn im2row<R: Real>(input: &[R], shape: &ConvShape, out: &mut [R]) {
    let (ih, iw, ic) = (shape.in_h as isize, shape.in_w as isize, shape.in_c);
    let k_len = shape.k_len();
    debug_assert_eq!(input.len(), shape.in_h * shape.in_w * shape.in_c);
    debug_assert_eq!(out.len(), shape.spatial() * k_len);

    let mut s = 0;
    for oy in 0..shape.out_h() {
        for ox in 0..shape.out_w() {
            let row = &mut out[s * k_len..(s + 1) * k_len];
            let base_y = (oy * ConvShape::STRIDE) as isize - ConvShape::PAD as isize;
            let base_x = (ox * ConvShape::STRIDE) as isize - ConvShape::PAD as isize;
            for ky in 0..3isize {
                let iy = base_y + ky;
                for kx in 0..3isize {
                    let ix = base_x + kx;
                    let dst = ((ky * 3 + kx) as usize) * ic;
                    if iy >= 0 && iy < ih && ix >= 0 && ix < iw {
                        let src = ((iy * iw + ix) as usize) * ic;
                        row[dst..dst + ic].copy_from_slice(&input[src..src + ic]);
                    } else {
                        row[dst..dst + ic].iter_mut().for_each(|v| *v = R::ZERO);
                    }
                }
            }
            s += 1;
        }
    }
}

/// Scatter-add an im2row gradient back onto the HWC input gradient
/// (the adjoint of [`im2row`]).
pub fn im2row_adjoint<R: Real>(grad_rows: &[R], shape: &ConvShape, grad_input: &mut [R]) {
    let (ih, iw, ic) = (shape.in_h as isize, shape.in_w as isize, shape.in_c);
    let k_len = shape.k_len();
    debug_assert_eq!(grad_rows.len(), shape.spatial() * k_len);
    debug_assert_eq!(grad_input.len(), shape.in_h * shape.in_w * shape.in_c);

    let mut s = 0;
    for oy in 0..shape.out_h() {
        for ox in 0..shape.out_w() {
            let row = &grad_rows[s * k_len..(s + 1) * k_len];
            let base_y = (oy * ConvShape::STRIDE) as isize - ConvShape::PAD as isize;
            let base_x = (ox * ConvShape::STRIDE) as isize - ConvShape::PAD as isize;
            for ky in 0..3isize {
                let iy = base_y + ky;
                if iy < 0 || iy >= ih {
                    continue;
                }
                for kx in 0..3isize {
                    let ix = base_x + kx;
                    if ix < 0 || ix >= iw {
                        continue;
                    }
                    let src = ((ky * 3 + kx) as usize) * ic;
                    let dst = ((iy * iw + ix) as usize) * ic;
                    for c in 0..ic {
                        grad_input[dst + c] += row[src + c];
                    }
                }
            }
            s += 1;
        }
    }
}

/// Group normalization over an HWC activation: each group of channels is
/// normalized over (spatial x group channels), then scaled and shifted per
/// channel. Returns the per-group reciprocal standard deviations; `x_hat`
/// receives the normalized values needed by the backward pass.
pub fn group_norm_forward<R: Real>(
    x: &[R],
    spatial: usize,
    channels: usize,
    groups: usize,
    gamma: &[R],
    beta: &[R],
    eps: f64,
    x_hat: &mut [R],
    out: &mut [R],
) -> Vec<R> {
    debug_assert_eq!(channels % groups, 0);
    let cg = channels / groups;
    let group_len = spatial * cg;
    let mut inv_std = vec![R::ZERO; groups];

    for g in 0..groups {
        let c0 = g * cg;
        let mut sum = R::ZERO;
        for s in 0..spatial {
            let row = &x[s * channels + c0..s * channels + c0 + cg];
            for &v in row {
                sum += v;
            }
        }
        let mean = sum * R::from_f64(1.0 / group_len as f64);
        let mut var_sum = R::ZERO;
        for s in 0..spatial {
            let row = &x[s * channels + c0..s * channels + c0 + cg];
            for &v in row {
                let d = v - mean;
                var_sum += d * d;
            }
        }
        let var = var_sum * R::from_f64(1.0 / group_len as f64);
        let istd = R::ONE / (var + R::from_f64(eps)).sqrt();
        inv_std[g] = istd;
        for s in 0..spatial {
            let base = s * channels + c0;
            for c in 0..cg {
                let h = (x[base + c] - mean) * istd;
                x_hat[base + c] = h;
                out[base + c] = gamma[c0 + c] * h + beta[c0 + c];
            }
        }
    }
    inv_std
}

/// Backward pass of [`group_norm_forward`]. Accumulates into `grad_gamma`
/// and `grad_beta`; overwrites `grad_x`.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<R: Real>(
    grad_out: &[R],
    x_hat: &[R],
    inv_std: &[R],
    spatial: usize,
    channels: usize,
    groups: usize,
    gamma: &[R],
    grad_gamma: &mut [R],
    grad_beta: &mut [R],
    grad_x: &mut [R],
) {
    let cg = channels / groups;
    let group_len = spatial * cg;
    let inv_n = R::from_f64(1.0 / group_len as f64);

    // one row-major pass gathers the gamma/beta grads and the two group
    // statistics; a second writes grad_x
    let mut dg = vec![R::ZERO; cg];
    let mut db = vec![R::ZERO; cg];
    for g in 0..groups {
        let c0 = g * cg;
        dg.iter_mut().for_each(|v| *v = R::ZERO);
        db.iter_mut().for_each(|v| *v = R::ZERO);
        let mut sum_dh = R::ZERO;
        let mut sum_dh_h = R::ZERO;
        for s in 0..spatial {
            let base = s * channels + c0;
            for c in 0..cg {
                let go = grad_out[base + c];
                let h = x_hat[base + c];
                dg[c] += go * h;
                db[c] += go;
                let dh = go * gamma[c0 + c];
                sum_dh += dh;
                sum_dh_h += dh * h;
            }
        }
        for c in 0..cg {
            grad_gamma[c0 + c] += dg[c];
            grad_beta[c0 + c] += db[c];
        }
        let mean_dh = sum_dh * inv_n;
        let mean_dh_h = sum_dh_h * inv_n;
        let istd = inv_std[g];
        for s in 0..spatial {
            let base = s * channels + c0;
            for c in 0..cg {
                let dh = grad_out[base + c] * gamma[c0 + c];
                grad_x[base + c] = istd * (dh - mean_dh - x_hat[base + c] * mean_dh_h);
            }
        }
    }
}

/// Numerically stable softmax of one logit row.
pub fn softmax_row<R: Real>(logits: &[R], out: &mut [R]) {
    let mut max = logits[0];
    for &v in &logits[1..] {
        max = max.maximum(v);
    }
    let mut sum = R::ZERO;
    for (o, &v) in out.iter_mut().zip(logits) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    let inv = R::ONE / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Euclidean norm of a vector.
pub fn l2_norm<R: Real>(v: &[R]) -> R {
    let mut s = R::ZERO;
    for &x in v {
        s += x * x;
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], rows: usize, k_len: usize, b_t: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            for k in 0..k_len {
                for j in 0..n {
                    out[r * n + j] += a[r * k_len + k] * b_t[k * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive() {
        let mut rng = crate::rng::Rng::new(5);
        for (rows, k_len, n) in [(1, 3, 2), (4, 5, 8), (7, 27, 16), (13, 9, 5)] {
            let a: Vec<f64> = (0..rows * k_len).map(|_| rng.next_f64() - 0.5).collect();
            let b: Vec<f64> = (0..k_len * n).map(|_| rng.next_f64() - 0.5).collect();
            let mut out = vec![0.0; rows * n];
            matmul_acc(&a, rows, k_len, &b, n, &mut out);
            let want = naive_matmul(&a, rows, k_len, &b, n);
            for (x, y) in out.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn im2row_adjoint_is_transpose() {
        // <im2row(x), y> == <x, adjoint(y)> for random x, y
        let shape = ConvShape {
            in_h: 6,
            in_w: 6,
            in_c: 3,
            out_c: 4,
        };
        let mut rng = crate::rng::Rng::new(8);
        let x: Vec<f64> = (0..6 * 6 * 3).map(|_| rng.next_f64() - 0.5).collect();
        let rows = shape.spatial() * shape.k_len();
        let y: Vec<f64> = (0..rows).map(|_| rng.next_f64() - 0.5).collect();

        let mut px = vec![0.0; rows];
        im2row(&x, &shape, &mut px);
        let lhs: f64 = px.iter().zip(&y).map(|(a, b)| a * b).sum();

        let mut aty = vec![0.0; x.len()];
        im2row_adjoint(&y, &shape, &mut aty);
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();

        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn group_norm_normalizes() {
        let spatial = 10;
        let channels = 8;
        let groups = 4;
        let mut rng = crate::rng::Rng::new(2);
        let x: Vec<f64> = (0..spatial * channels).map(|_| rng.next_f64() * 3.0).collect();
        let gamma = vec![1.0; channels];
        let beta = vec![0.0; channels];
        let mut x_hat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        group_norm_forward(&x, spatial, channels, groups, &gamma, &beta, 1e-5, &mut x_hat, &mut out);

        let cg = channels / groups;
        for g in 0..groups {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for s in 0..spatial {
                for c in 0..cg {
                    let v = out[s * channels + g * cg + c];
                    sum += v;
                    sq += v * v;
                }
            }
            let n = (spatial * cg) as f64;
            let mean = sum / n;
            let var = sq / n - mean * mean;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let logits = [1.0f64, -2.0, 0.5, 3.0];
        let mut p = [0.0; 4];
        softmax_row(&logits, &mut p);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
    }
}
