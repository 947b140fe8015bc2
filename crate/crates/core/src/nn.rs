//! Small neural-network primitives with explicit backward passes.
//!
//! Everything is generic over `f32`/`f64`: training runs in f32 for speed
//! while gradient checks and saliency paths run in f64. Parameters live in
//! flat buffers owned by the model; these functions work on array views.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use ndarray::NdFloat;

/// Convert an f64 literal into the working float type.
pub fn cast<F: NdFloat>(x: f64) -> F {
    F::from(x).expect("finite literal")
}

/// Gather convolution windows: `col[(c*k + j), t] = x[c, t + j - pad]`,
/// zero outside the input. `x` is channels x time.
pub fn im2col<F: NdFloat>(x: &ArrayView2<F>, kernel: usize, pad: usize) -> Array2<F> {
    let (c_in, t_len) = x.dim();
    let mut col = Array2::zeros((c_in * kernel, t_len));
    for c in 0..c_in {
        let src = x.row(c);
        let src = src.as_slice().expect("row-major input");
        for j in 0..kernel {
            let mut dst_row = col.row_mut(c * kernel + j);
            let dst = dst_row.as_slice_mut().expect("row-major col");
            // dst[t] = src[t + j - pad] where valid.
            let shift = j as isize - pad as isize;
            let (dst_start, src_start) = if shift < 0 {
                ((-shift) as usize, 0usize)
            } else {
                (0usize, shift as usize)
            };
            if src_start + dst_start >= t_len {
                continue;
            }
            let n = t_len - src_start - dst_start;
            dst[dst_start..dst_start + n].copy_from_slice(&src[src_start..src_start + n]);
        }
    }
    col
}

/// Scatter-add the transpose of `im2col`: accumulates `grad_col` back onto
/// the input gradient.
pub fn col2im_accumulate<F: NdFloat>(
    grad_col: &ArrayView2<F>,
    kernel: usize,
    pad: usize,
    grad_x: &mut ArrayViewMut2<F>,
) {
    let (c_in, t_len) = grad_x.dim();
    for c in 0..c_in {
        for j in 0..kernel {
            let src = grad_col.row(c * kernel + j);
            let src = src.as_slice().expect("row-major grad col");
            let shift = j as isize - pad as isize;
            let (col_start, x_start) = if shift < 0 {
                ((-shift) as usize, 0usize)
            } else {
                (0usize, shift as usize)
            };
            if x_start + col_start >= t_len {
                continue;
            }
            let n = t_len - x_start - col_start;
            let mut dst_row = grad_x.row_mut(c);
            let dst = dst_row.as_slice_mut().expect("row-major grad x");
            for i in 0..n {
                dst[x_start + i] = dst[x_start + i] + src[col_start + i];
            }
        }
    }
}

/// Same-length 1-D convolution: `weight` is `c_out x (c_in * k)`.
/// Returns the output and the column matrix for backward reuse.
pub fn conv1d_forward<F: NdFloat>(
    x: &ArrayView2<F>,
    weight: &ArrayView2<F>,
    bias: &ArrayView1<F>,
    kernel: usize,
    pad: usize,
) -> (Array2<F>, Array2<F>) {
    let col = im2col(x, kernel, pad);
    let mut out = weight.dot(&col);
    out += &bias.view().insert_axis(Axis(1));
    (out, col)
}

/// Backward for [`conv1d_forward`]. Accumulates into the parameter
/// gradients and returns the input gradient.
pub fn conv1d_backward<F: NdFloat>(
    col: &ArrayView2<F>,
    weight: &ArrayView2<F>,
    grad_out: &ArrayView2<F>,
    kernel: usize,
    pad: usize,
    grad_weight: &mut ArrayViewMut2<F>,
    grad_bias: &mut [F],
) -> Array2<F> {
    // dW += dY . col^T
    general_mat_mul(F::one(), grad_out, &col.t(), F::one(), grad_weight);
    for (c, g) in grad_bias.iter_mut().enumerate() {
        *g = *g + grad_out.row(c).sum();
    }
    let grad_col = weight.t().dot(grad_out);
    let c_in = col.nrows() / kernel;
    let mut grad_x = Array2::zeros((c_in, grad_out.ncols()));
    col2im_accumulate(&grad_col.view(), kernel, pad, &mut grad_x.view_mut());
    grad_x
}

pub fn relu_inplace<F: NdFloat>(x: &mut Array2<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Zero the columns at and beyond `valid`, so padded frames cannot leak
/// into later layers.
pub fn zero_invalid_cols<F: NdFloat>(x: &mut Array2<F>, valid: usize) {
    let t_len = x.ncols();
    if valid >= t_len {
        return;
    }
    x.slice_mut(ndarray::s![.., valid..]).fill(F::zero());
}

/// Max pooling with kernel 3, stride 3, ceil mode, restricted to the valid
/// prefix. Returns the pooled output, the input index that won each window
/// (`usize::MAX` for padded windows) and the new valid length.
pub fn maxpool3<F: NdFloat>(
    x: &ArrayView2<F>,
    valid: usize,
) -> (Array2<F>, Vec<usize>, usize) {
    let (channels, t_len) = x.dim();
    let t_out = t_len.div_ceil(3);
    let valid_out = valid.div_ceil(3);
    let mut out = Array2::zeros((channels, t_out));
    let mut argmax = vec![usize::MAX; channels * t_out];
    for c in 0..channels {
        for j in 0..valid_out {
            let lo = 3 * j;
            let hi = (lo + 3).min(valid);
            let mut best = x[[c, lo]];
            let mut best_t = lo;
            for t in lo + 1..hi {
                if x[[c, t]] > best {
                    best = x[[c, t]];
                    best_t = t;
                }
            }
            out[[c, j]] = best;
            argmax[c * t_out + j] = best_t;
        }
    }
    (out, argmax, valid_out)
}

/// Global max pooling over the valid prefix of each channel row. Returns
/// the pooled vector and the winning time index per channel.
pub fn maxpool_over_time<F: NdFloat>(
    h: &ArrayView2<F>,
    valid: usize,
) -> (Array1<F>, Vec<usize>) {
    let channels = h.nrows();
    let mut out = Array1::zeros(channels);
    let mut argmax = vec![usize::MAX; channels];
    for c in 0..channels {
        let mut best = F::neg_infinity();
        let mut best_t = usize::MAX;
        for t in 0..valid {
            if h[[c, t]] > best {
                best = h[[c, t]];
                best_t = t;
            }
        }
        out[c] = best;
        argmax[c] = best_t;
    }
    (out, argmax)
}

pub fn maxpool3_backward<F: NdFloat>(
    grad_out: &ArrayView2<F>,
    argmax: &[usize],
    t_in: usize,
) -> Array2<F> {
    let (channels, t_out) = grad_out.dim();
    let mut grad_x = Array2::zeros((channels, t_in));
    for c in 0..channels {
        for j in 0..t_out {
            let t = argmax[c * t_out + j];
            if t != usize::MAX {
                grad_x[[c, t]] = grad_x[[c, t]] + grad_out[[c, j]];
            }
        }
    }
    grad_x
}

/// Log-mean-exp over time with overflow-safe max subtraction:
/// `out_e = m_e + (1/r) * ln(mean_t exp(r * (h_et - m_e)))`.
///
/// Interpolates between mean pooling (r -> 0) and max pooling (r -> inf).
pub fn log_mean_exp<F: NdFloat>(h: &ArrayView2<F>, r: F, valid: usize) -> Array1<F> {
    let e_dim = h.nrows();
    let n = cast::<F>(valid as f64);
    let mut out = Array1::zeros(e_dim);
    for e in 0..e_dim {
        let row = h.row(e);
        let m = row
            .iter()
            .take(valid)
            .cloned()
            .fold(F::neg_infinity(), F::max);
        let sum: F = row
            .iter()
            .take(valid)
            .map(|&v| ((v - m) * r).exp())
            .fold(F::zero(), |a, b| a + b);
        out[e] = m + (sum / n).ln() / r;
    }
    out
}

/// d out_e / d h_et for [`log_mean_exp`]: a per-row softmax of `r * h`.
pub fn log_mean_exp_weights<F: NdFloat>(h: &ArrayView2<F>, r: F, valid: usize) -> Array2<F> {
    let (e_dim, t_len) = h.dim();
    let mut w = Array2::zeros((e_dim, t_len));
    for e in 0..e_dim {
        let row = h.row(e);
        let m = row
            .iter()
            .take(valid)
            .cloned()
            .fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for t in 0..valid {
            let v = ((row[t] - m) * r).exp();
            w[[e, t]] = v;
            sum = sum + v;
        }
        for t in 0..valid {
            w[[e, t]] = w[[e, t]] / sum;
        }
    }
    w
}

/// Row-wise softmax over the valid prefix; invalid columns become zero.
pub fn softmax_rows<F: NdFloat>(scores: &ArrayView2<F>, valid: usize) -> Array2<F> {
    let (rows, cols) = scores.dim();
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        let row = scores.row(i);
        let m = row
            .iter()
            .take(valid)
            .cloned()
            .fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for t in 0..valid {
            let v = (row[t] - m).exp();
            out[[i, t]] = v;
            sum = sum + v;
        }
        for t in 0..valid {
            out[[i, t]] = out[[i, t]] / sum;
        }
    }
    out
}

pub fn sigmoid<F: NdFloat>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use ndarray::arr2;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = Stream::new(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.uniform(-1.5, 1.5))
    }

    #[test]
    fn conv_matches_naive_loop() {
        let x = random_matrix(3, 7, 1);
        let weight = random_matrix(2, 3 * 5, 2);
        let bias = Array1::from_vec(vec![0.3, -0.2]);
        let (out, _) = conv1d_forward(&x.view(), &weight.view(), &bias.view(), 5, 2);
        for co in 0..2 {
            for t in 0..7 {
                let mut acc = bias[co];
                for ci in 0..3 {
                    for j in 0..5 {
                        let ti = t as isize + j as isize - 2;
                        if ti >= 0 && (ti as usize) < 7 {
                            acc += weight[[co, ci * 5 + j]] * x[[ci, ti as usize]];
                        }
                    }
                }
                assert!((out[[co, t]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = random_matrix(2, 6, 3);
        let weight = random_matrix(3, 2 * 3, 4);
        let bias = Array1::from_vec(vec![0.1, 0.0, -0.1]);
        let loss = |x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>| -> f64 {
            let (out, _) = conv1d_forward(&x.view(), &w.view(), &b.view(), 3, 1);
            // Weighted sum so every output contributes distinctly.
            out.indexed_iter()
                .map(|((c, t), v)| v * ((1 + c * 7 + t) as f64 * 0.01))
                .sum()
        };
        let (out, col) = conv1d_forward(&x.view(), &weight.view(), &bias.view(), 3, 1);
        let grad_out = Array2::from_shape_fn(out.dim(), |(c, t)| (1 + c * 7 + t) as f64 * 0.01);
        let mut gw = Array2::zeros(weight.dim());
        let mut gb = vec![0.0; 3];
        let gx = conv1d_backward(
            &col.view(),
            &weight.view(),
            &grad_out.view(),
            3,
            1,
            &mut gw.view_mut(),
            &mut gb,
        );
        let h = 1e-6;
        for c in 0..2 {
            for t in 0..6 {
                let mut xp = x.clone();
                xp[[c, t]] += h;
                let mut xm = x.clone();
                xm[[c, t]] -= h;
                let fd = (loss(&xp, &weight, &bias) - loss(&xm, &weight, &bias)) / (2.0 * h);
                assert!((fd - gx[[c, t]]).abs() < 1e-6, "dx mismatch at {c},{t}");
            }
        }
        for i in 0..weight.len() {
            let (r, cidx) = (i / weight.ncols(), i % weight.ncols());
            let mut wp = weight.clone();
            wp[[r, cidx]] += h;
            let mut wm = weight.clone();
            wm[[r, cidx]] -= h;
            let fd = (loss(&x, &wp, &bias) - loss(&x, &wm, &bias)) / (2.0 * h);
            assert!((fd - gw[[r, cidx]]).abs() < 1e-6, "dw mismatch at {i}");
        }
    }

    #[test]
    fn maxpool_ceil_lengths_and_backward() {
        let x = arr2(&[[1.0, 5.0, 2.0, 7.0, 0.0, 0.0, 3.0]]);
        let (out, argmax, valid_out) = maxpool3(&x.view(), 7);
        assert_eq!(out.ncols(), 3);
        assert_eq!(valid_out, 3);
        assert_eq!(out, arr2(&[[5.0, 7.0, 3.0]]));
        let grad_out = arr2(&[[1.0, 2.0, 3.0]]);
        let gx = maxpool3_backward(&grad_out.view(), &argmax, 7);
        assert_eq!(gx, arr2(&[[0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 3.0]]));
    }

    #[test]
    fn log_mean_exp_constant_row_is_identity() {
        let h = arr2(&[[0.7, 0.7, 0.7]]);
        for r in [1e-3f64, 0.1, 1.0, 10.0, 500.0] {
            let out = log_mean_exp(&h.view(), r, 3);
            assert!((out[0] - 0.7).abs() < 1e-9, "r={r}");
        }
    }

    #[test]
    fn log_mean_exp_closed_form_and_limits() {
        let h = arr2(&[[0.0, 1.0]]);
        // r = 1: log((1 + e)/2)
        let out = log_mean_exp(&h.view(), 1.0, 2);
        let expected = ((1.0 + std::f64::consts::E) / 2.0).ln();
        assert!((out[0] - expected).abs() < 1e-12);
        assert!((expected - 0.6201).abs() < 1e-4);
        // r large: max
        let out = log_mean_exp(&h.view(), 200.0, 2);
        assert!((out[0] - 1.0).abs() < 5e-3);
        // r small: mean
        let out = log_mean_exp(&h.view(), 1e-3, 2);
        assert!((out[0] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn log_mean_exp_sandwiched_between_mean_and_max() {
        for seed in 0..20 {
            let h = random_matrix(4, 9, seed);
            for r in [0.1, 1.0, 10.0] {
                let out = log_mean_exp(&h.view(), r, 9);
                for e in 0..4 {
                    let row = h.row(e);
                    let mean = row.sum() / 9.0;
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    assert!(out[e] >= mean - 1e-12 && out[e] <= max + 1e-12);
                }
            }
        }
    }

    #[test]
    fn log_mean_exp_survives_huge_values() {
        let h = arr2(&[[500.0, 499.0]]);
        let out = log_mean_exp(&h.view(), 10.0f64, 2);
        assert!(out[0].is_finite());
        assert!(out[0] <= 500.0 + 1e-9 && out[0] >= 499.5);
    }

    #[test]
    fn softmax_rows_normalised_and_shift_invariant() {
        let scores = arr2(&[[0.0, (3.0f64).ln(), f64::NAN]]);
        let a = softmax_rows(&scores.view(), 2);
        assert!((a[[0, 0]] - 0.25).abs() < 1e-12);
        assert!((a[[0, 1]] - 0.75).abs() < 1e-12);
        assert_eq!(a[[0, 2]], 0.0);
        let shifted = arr2(&[[5.0, (3.0f64).ln() + 5.0, 0.0]]);
        let b = softmax_rows(&shifted.view(), 2);
        assert!((a[[0, 0]] - b[[0, 0]]).abs() < 1e-12);
        assert!((a[[0, 1]] - b[[0, 1]]).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
        assert!(sigmoid(800.0f64) > 0.999);
    }
}
