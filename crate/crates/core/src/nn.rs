//! Forward kernels for the tower layers.
//!
//! These are the single source of truth for layer semantics: the autodiff
//! tape calls them for its forward pass and the tests probe them directly.

use crate::tensor::{dot, Scalar, Tensor};

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable `-ln(sigmoid(x))` = softplus(-x).
pub fn neg_log_sigmoid(x: f64) -> f64 {
    let z = -x;
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Depthwise convolution with kernel width 3 and same (zero) padding:
/// `y[t][c] = k[0][c]*x[t-1][c] + k[1][c]*x[t][c] + k[2][c]*x[t+1][c]`.
pub fn depthwise_conv3<S: Scalar>(x: &Tensor<S>, kernel: &Tensor<S>) -> Tensor<S> {
    let (t_len, d) = (x.rows(), x.cols());
    assert_eq!(kernel.shape(), &[3, d], "kernel shape");
    let mut out = Tensor::zeros(&[t_len, d]);
    for t in 0..t_len {
        let orow = out.row_mut(t);
        if t > 0 {
            let prev = x.row(t - 1);
            for c in 0..d {
                orow[c] += kernel.row(0)[c] * prev[c];
            }
        }
        let cur = x.row(t);
        for c in 0..d {
            orow[c] += kernel.row(1)[c] * cur[c];
        }
        if t + 1 < t_len {
            let next = x.row(t + 1);
            for c in 0..d {
                orow[c] += kernel.row(2)[c] * next[c];
            }
        }
    }
    out
}

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < S::ZERO {
            *v = S::ZERO;
        }
    }
    out
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    assert_eq!(a.shape(), b.shape());
    let mut out = a.clone();
    for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += *v;
    }
    out
}

pub fn add_row_broadcast<S: Scalar>(x: &Tensor<S>, bias: &Tensor<S>) -> Tensor<S> {
    assert_eq!(bias.len(), x.cols());
    let mut out = x.clone();
    for t in 0..x.rows() {
        for (o, b) in out.row_mut(t).iter_mut().zip(bias.data()) {
            *o += *b;
        }
    }
    out
}

pub fn zero_masked_rows<S: Scalar>(x: &Tensor<S>, mask: &[bool]) -> Tensor<S> {
    assert_eq!(mask.len(), x.rows());
    let mut out = x.clone();
    for (t, keep) in mask.iter().enumerate() {
        if !*keep {
            for v in out.row_mut(t) {
                *v = S::ZERO;
            }
        }
    }
    out
}

/// Row-wise softmax where masked key columns get exactly zero weight.
/// Every row is normalized over the real keys only; the caller guarantees at
/// least one real key.
pub fn masked_softmax_rows<S: Scalar>(scores: &Tensor<S>, key_mask: &[bool]) -> Tensor<S> {
    let (rows, cols) = (scores.rows(), scores.cols());
    assert_eq!(key_mask.len(), cols);
    assert!(key_mask.iter().any(|m| *m), "all keys masked");
    let mut out = Tensor::zeros(&[rows, cols]);
    for t in 0..rows {
        let srow = scores.row(t);
        let mut max = None::<S>;
        for (j, real) in key_mask.iter().enumerate() {
            if *real && max.map_or(true, |m| srow[j] > m) {
                max = Some(srow[j]);
            }
        }
        let max = max.unwrap();
        let orow = out.row_mut(t);
        let mut sum = S::ZERO;
        for (j, real) in key_mask.iter().enumerate() {
            if *real {
                let e = (srow[j] - max).exp();
                orow[j] = e;
                sum += e;
            }
        }
        for v in orow.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

pub fn mean_masked_rows<S: Scalar>(x: &Tensor<S>, mask: &[bool]) -> Tensor<S> {
    let n_real = mask.iter().filter(|m| **m).count();
    assert!(n_real > 0, "mean over zero rows");
    let inv = S::from_f64(1.0 / n_real as f64);
    let mut out = Tensor::zeros(&[x.cols()]);
    for (t, real) in mask.iter().enumerate() {
        if *real {
            for (o, v) in out.data_mut().iter_mut().zip(x.row(t)) {
                *o += inv * *v;
            }
        }
    }
    out
}

/// v · W for a rank-1 `v` of length n and W of shape n×m.
pub fn vec_mat<S: Scalar>(v: &Tensor<S>, w: &Tensor<S>) -> Tensor<S> {
    assert_eq!(v.len(), w.rows());
    let mut out = Tensor::zeros(&[w.cols()]);
    for (i, a) in v.data().iter().enumerate() {
        for (o, x) in out.data_mut().iter_mut().zip(w.row(i)) {
            *o += *a * *x;
        }
    }
    out
}

pub fn l2_norm<S: Scalar>(v: &Tensor<S>) -> S {
    dot(v.data(), v.data()).sqrt()
}

pub fn l2_normalize<S: Scalar>(v: &Tensor<S>) -> Tensor<S> {
    let norm = l2_norm(v);
    let mut out = v.clone();
    for x in out.data_mut() {
        *x = *x / norm;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_symmetry() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-12);
        assert!((neg_log_sigmoid(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn depthwise_conv3_same_padding() {
        // Single channel: x = [1, 2, 3], kernel = [10, 1, 0.1]
        let x = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0f64]);
        let k = Tensor::from_vec(&[3, 1], vec![10.0, 1.0, 0.1]);
        let y = depthwise_conv3(&x, &k);
        assert_eq!(y.data(), &[1.0 + 0.2, 10.0 + 2.0 + 0.3, 20.0 + 3.0]);
    }

    #[test]
    fn masked_softmax_zeroes_masked_keys_and_normalizes() {
        let s = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 50.0, 0.0, 0.0, 50.0f64]);
        let w = masked_softmax_rows(&s, &[true, true, false]);
        for t in 0..2 {
            assert_eq!(w.row(t)[2], 0.0);
            let sum: f64 = w.row(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!((w.row(1)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_unit_norm() {
        let v = Tensor::from_vec(&[3], vec![3.0, 0.0, 4.0f64]);
        let n = l2_normalize(&v);
        assert!((l2_norm(&n) - 1.0).abs() < 1e-12);
        assert!((n.data()[0] - 0.6).abs() < 1e-12);
    }
}
