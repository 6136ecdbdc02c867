//! Primitive layer operations: forward rules and their exact gradients.
//!
//! Conventions:
//! - A sentence is a d×T matrix whose columns are word embeddings.
//! - A filter bank of width `w` is an F×(d·w) matrix; filter `f` applied at
//!   offset `t` takes the inner product with columns `t..t+w` of the input,
//!   entry `(i, j)` of the filter (dim i, offset j) living at `i*w + j`.
//! - All gradients are with respect to a scalar loss downstream; `grad_out`
//!   always has the shape of the op's output.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use rand::Rng as _;

pub const PROB_CLAMP: f64 = 1e-12;

/// Wx + b.
pub fn affine_forward(w: &Matrix, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if b.len() != w.rows() {
        return Err(Error::DimMismatch(format!(
            "affine: bias length {} vs {} rows",
            b.len(),
            w.rows()
        )));
    }
    let mut y = w.matvec(x)?;
    for (yi, bi) in y.iter_mut().zip(b.iter()) {
        *yi += bi;
    }
    Ok(y)
}

/// Gradients of Wx + b: (dW, db, dx) given the output gradient.
pub fn affine_backward(w: &Matrix, x: &[f64], grad_out: &[f64]) -> (Matrix, Vec<f64>, Vec<f64>) {
    debug_assert_eq!(grad_out.len(), w.rows());
    let mut dw = Matrix::zeros(w.rows(), w.cols());
    for i in 0..w.rows() {
        let g = grad_out[i];
        let row = dw.row_mut(i);
        for (dwj, xj) in row.iter_mut().zip(x.iter()) {
            *dwj = g * xj;
        }
    }
    let db = grad_out.to_vec();
    let dx = w.matvec_transposed(grad_out).expect("shape checked");
    (dw, db, dx)
}

/// Temporal convolution of a d×T input with an F×(d·w) filter bank.
/// Output is F×(T−w+1); entry (f, t) = <filter f, X[:, t..t+w]> + bias[f].
pub fn conv_forward(x: &Matrix, filters: &Matrix, bias: &[f64], width: usize) -> Result<Matrix> {
    let (d, t_len) = (x.rows(), x.cols());
    if width == 0 || filters.cols() != d * width {
        return Err(Error::DimMismatch(format!(
            "conv: filter width {} over {} dims needs {} columns, bank has {}",
            width,
            d,
            d * width,
            filters.cols()
        )));
    }
    if bias.len() != filters.rows() {
        return Err(Error::DimMismatch(format!(
            "conv: bias length {} vs {} filters",
            bias.len(),
            filters.rows()
        )));
    }
    if t_len < width {
        return Err(Error::InvalidArg(format!(
            "conv: sequence length {} shorter than filter width {}",
            t_len, width
        )));
    }
    let n_pos = t_len - width + 1;
    let n_filters = filters.rows();
    let mut out = Matrix::zeros(n_filters, n_pos);
    for f in 0..n_filters {
        let filt = filters.row(f);
        for t in 0..n_pos {
            let mut acc = bias[f];
            for i in 0..d {
                let xrow = x.row(i);
                let frow = &filt[i * width..(i + 1) * width];
                for j in 0..width {
                    acc += frow[j] * xrow[t + j];
                }
            }
            out.set(f, t, acc);
        }
    }
    Ok(out)
}

/// Gradients of the temporal convolution: (dFilters, dBias, dX).
pub fn conv_backward(
    x: &Matrix,
    filters: &Matrix,
    width: usize,
    grad_out: &Matrix,
) -> (Matrix, Vec<f64>, Matrix) {
    let (d, t_len) = (x.rows(), x.cols());
    let n_pos = t_len - width + 1;
    let n_filters = filters.rows();
    debug_assert_eq!(grad_out.rows(), n_filters);
    debug_assert_eq!(grad_out.cols(), n_pos);
    let mut d_filters = Matrix::zeros(n_filters, d * width);
    let mut d_bias = vec![0.0; n_filters];
    let mut dx = Matrix::zeros(d, t_len);
    for f in 0..n_filters {
        let filt = filters.row(f);
        for t in 0..n_pos {
            let g = grad_out.get(f, t);
            if g == 0.0 {
                continue;
            }
            d_bias[f] += g;
            for i in 0..d {
                let xrow = x.row(i);
                let dfrow = &mut d_filters.row_mut(f)[i * width..(i + 1) * width];
                for j in 0..width {
                    dfrow[j] += g * xrow[t + j];
                }
            }
            for i in 0..d {
                let frow = &filt[i * width..(i + 1) * width];
                let dxrow = dx.row_mut(i);
                for j in 0..width {
                    dxrow[t + j] += g * frow[j];
                }
            }
        }
    }
    (d_filters, d_bias, dx)
}

pub fn relu_forward(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptyInput("relu".into()));
    }
    Ok(x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect())
}

/// Subgradient 0 at exactly zero.
pub fn relu_backward(x: &[f64], grad_out: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(grad_out.iter())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

/// Per-row maximum of a featuremap, with the argmax positions kept for the
/// backward pass. Ties resolve to the lowest index.
pub fn max_over_time(fm: &Matrix) -> Result<(Vec<f64>, Vec<usize>)> {
    if fm.rows() == 0 || fm.cols() == 0 {
        return Err(Error::EmptyInput("max_over_time".into()));
    }
    let mut maxima = Vec::with_capacity(fm.rows());
    let mut arg = Vec::with_capacity(fm.rows());
    for i in 0..fm.rows() {
        let row = fm.row(i);
        let mut best = row[0];
        let mut best_j = 0;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                best_j = j;
            }
        }
        maxima.push(best);
        arg.push(best_j);
    }
    Ok((maxima, arg))
}

/// Routes each row's gradient to the position that won the max.
pub fn max_over_time_backward(
    rows: usize,
    cols: usize,
    argmax: &[usize],
    grad_out: &[f64],
) -> Matrix {
    let mut dx = Matrix::zeros(rows, cols);
    for (i, (&j, &g)) in argmax.iter().zip(grad_out.iter()).enumerate() {
        dx.set(i, j, g);
    }
    dx
}

/// Inverted dropout. In training mode each entry survives with probability
/// `keep` and is scaled by 1/keep; the returned mask holds the applied
/// per-entry factors. Evaluation mode is the identity and draws nothing.
pub fn dropout_forward(
    x: &[f64],
    keep: f64,
    train_mode: bool,
    rng: &mut Rng,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::InvalidArg(format!(
            "dropout keep-probability {} outside (0, 1]",
            keep
        )));
    }
    if !train_mode {
        return Ok((x.to_vec(), None));
    }
    let inv = 1.0 / keep;
    let mut mask = Vec::with_capacity(x.len());
    for _ in 0..x.len() {
        let u: f64 = rng.gen();
        mask.push(if u < keep { inv } else { 0.0 });
    }
    let y = x.iter().zip(mask.iter()).map(|(v, m)| v * m).collect();
    Ok((y, Some(mask)))
}

pub fn dropout_backward(mask: &[f64], grad_out: &[f64]) -> Vec<f64> {
    mask.iter().zip(grad_out.iter()).map(|(m, g)| m * g).collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyInput("softmax".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// dL/dv given s = softmax(v): s ∘ (g − <g, s>).
pub fn softmax_backward(s: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let dot: f64 = s.iter().zip(grad_out.iter()).map(|(a, b)| a * b).sum();
    s.iter()
        .zip(grad_out.iter())
        .map(|(&si, &gi)| si * (gi - dot))
        .collect()
}

/// −log p[label] with p clamped at 1e−12.
pub fn cross_entropy(p: &[f64], label: usize) -> Result<f64> {
    if label >= p.len() {
        return Err(Error::LabelOutOfRange {
            label,
            k: p.len(),
        });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArg(format!(
            "cross_entropy input sums to {}, expected 1",
            sum
        )));
    }
    Ok(-p[label].max(PROB_CLAMP).ln())
}

/// dL/dp for the clamped −log p[label].
pub fn cross_entropy_backward(p: &[f64], label: usize, grad_out: f64) -> Vec<f64> {
    let mut dp = vec![0.0; p.len()];
    if p[label] > PROB_CLAMP {
        dp[label] = -grad_out / p[label];
    }
    dp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn affine_identity_case() {
        let w = Matrix::identity(2);
        let y = affine_forward(&w, &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn affine_zero_weights_returns_bias() {
        let w = Matrix::zeros(2, 3);
        let y = affine_forward(&w, &[3.0, 3.0], &[9.0, -4.0, 0.5]).unwrap();
        assert_eq!(y, vec![3.0, 3.0]);
    }

    #[test]
    fn affine_matches_dense_multiply_oracle() {
        // Independent oracle: naive triple loop on a fixed random 3x3 case.
        let w = Matrix::from_rows(&[
            vec![0.3, -1.2, 0.7],
            vec![1.5, 0.1, -0.4],
            vec![-0.9, 2.0, 0.25],
        ])
        .unwrap();
        let b = [0.1, -0.2, 0.3];
        let x = [1.1, -0.5, 2.2];
        let mut expect = [0.0; 3];
        for i in 0..3 {
            let mut acc = b[i];
            for j in 0..3 {
                acc += w.get(i, j) * x[j];
            }
            expect[i] = acc;
        }
        let y = affine_forward(&w, &b, &x).unwrap();
        for i in 0..3 {
            assert!(close(y[i], expect[i], 1e-15));
        }
    }

    #[test]
    fn affine_rejects_dim_mismatch() {
        let w = Matrix::zeros(2, 3);
        assert!(affine_forward(&w, &[0.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(affine_forward(&w, &[0.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn conv_all_zero_filter_gives_zero_map() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]]).unwrap();
        let filters = Matrix::zeros(3, 4);
        let out = conv_forward(&x, &filters, &[0.0; 3], 2).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!((out.rows(), out.cols()), (3, 3));
    }

    #[test]
    fn conv_full_width_window_is_full_inner_product() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        // Single filter of width T=2 over d=2: layout (dim, offset).
        let filters = Matrix::from_vec(1, 4, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let out = conv_forward(&x, &filters, &[0.1], 2).unwrap();
        let expect = 0.1 + 0.5 * 1.0 + (-1.0) * 2.0 + 2.0 * 3.0 + 0.25 * 4.0;
        assert_eq!((out.rows(), out.cols()), (1, 1));
        assert!(close(out.get(0, 0), expect, 1e-15));
    }

    #[test]
    fn conv_matches_sliding_window_oracle() {
        // d=2, T=4, w=2 fixed case against an explicit sliding-window loop.
        let x = Matrix::from_rows(&[vec![0.1, -0.4, 0.9, 1.2], vec![-1.1, 0.3, 0.8, -0.6]])
            .unwrap();
        let filters =
            Matrix::from_rows(&[vec![0.2, -0.7, 1.1, 0.05], vec![-0.3, 0.6, 0.4, -1.5]]).unwrap();
        let bias = [0.15, -0.25];
        let out = conv_forward(&x, &filters, &bias, 2).unwrap();
        for f in 0..2 {
            for t in 0..3 {
                let mut acc = bias[f];
                for i in 0..2 {
                    for j in 0..2 {
                        acc += filters.get(f, i * 2 + j) * x.get(i, t + j);
                    }
                }
                assert!(close(out.get(f, t), acc, 1e-15), "f={} t={}", f, t);
            }
        }
    }

    #[test]
    fn conv_rejects_short_sequence() {
        let x = Matrix::zeros(2, 2);
        let filters = Matrix::zeros(1, 6);
        assert!(conv_forward(&x, &filters, &[0.0], 3).is_err());
    }

    #[test]
    fn softmax_uniform_on_constant_input() {
        let s = softmax(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        for v in s {
            assert!(close(v, 0.25, 1e-15));
        }
    }

    #[test]
    fn softmax_two_class_closed_form() {
        // e²/(e²+1) and 1/(e²+1).
        let s = softmax(&[2.0, 0.0]).unwrap();
        let e2 = 2.0_f64.exp();
        assert!(close(s[0], e2 / (e2 + 1.0), 1e-12));
        assert!(close(s[1], 1.0 / (e2 + 1.0), 1e-12));
        assert!(close(s[0], 0.880797, 1e-6));
        assert!(close(s[1], 0.119203, 1e-6));
    }

    #[test]
    fn softmax_rejects_empty_and_nonfinite() {
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        assert!(softmax(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn max_over_time_tie_breaks_low_index() {
        let fm = Matrix::from_rows(&[vec![3.5, 3.5, 3.5]]).unwrap();
        let (m, arg) = max_over_time(&fm).unwrap();
        assert_eq!(m, vec![3.5]);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn cross_entropy_uniform_is_log_k() {
        let p = vec![0.25; 4];
        let l = cross_entropy(&p, 2).unwrap();
        assert!(close(l, 4.0_f64.ln(), 1e-12));
        assert!(close(l, 1.386294, 1e-6));
    }

    #[test]
    fn cross_entropy_certain_label_is_zero() {
        let p = vec![0.0, 1.0];
        assert_eq!(cross_entropy(&p, 1).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_direct_evaluation() {
        let l = cross_entropy(&[0.7, 0.3], 1).unwrap();
        assert!(close(l, -(0.3_f64.ln()), 1e-12));
        assert!(close(l, 1.203973, 1e-6));
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], 2),
            Err(Error::LabelOutOfRange { label: 2, k: 2 })
        ));
    }

    #[test]
    fn dropout_eval_mode_is_identity() {
        let mut rng = stream(1, Stream::Dropout);
        let x = vec![0.4, -1.0, 2.5];
        let (y, mask) = dropout_forward(&x, 0.5, false, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
    }

    #[test]
    fn dropout_train_scales_survivors() {
        let mut rng = stream(3, Stream::Dropout);
        let x = vec![1.0; 64];
        let (y, mask) = dropout_forward(&x, 0.5, true, &mut rng).unwrap();
        let mask = mask.unwrap();
        for (v, m) in y.iter().zip(mask.iter()) {
            assert!((*v == 0.0 && *m == 0.0) || (close(*v, 2.0, 1e-15) && close(*m, 2.0, 1e-15)));
        }
        // Some entries survive, some drop at keep=0.5 over 64 draws.
        assert!(y.iter().any(|&v| v == 0.0));
        assert!(y.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn dropout_rejects_bad_keep() {
        let mut rng = stream(1, Stream::Dropout);
        assert!(dropout_forward(&[1.0], 0.0, true, &mut rng).is_err());
        assert!(dropout_forward(&[1.0], 1.5, true, &mut rng).is_err());
    }
}
