//! Forward and backward passes for the layers the router is built from.
//!
//! Each op exposes a forward function and an explicit backward that takes the
//! values saved during the forward pass. Parameter gradients are accumulated
//! into [`ParamTensor::grad`]; input gradients are returned.

use super::{Matrix, NnError, ParamTensor};

/// Probabilities below this are clamped inside `ln` by the cross-entropy losses.
pub const PROB_FLOOR: f64 = 1e-12;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `input · W + b`, with `b` broadcast over rows.
pub fn linear_forward(
    input: &Matrix,
    weight: &ParamTensor,
    bias: &ParamTensor,
) -> Result<Matrix, NnError> {
    let (d_in, d_out) = weight.shape();
    if input.cols() != d_in {
        return Err(NnError::shape("linear_forward", input.shape(), weight.shape()));
    }
    if bias.shape() != (1, d_out) {
        return Err(NnError::shape("linear_forward bias", (1, d_out), bias.shape()));
    }
    let mut out = input.matmul(&weight.value)?;
    let b = bias.value.row(0);
    for r in 0..out.rows() {
        for (o, bv) in out.row_mut(r).iter_mut().zip(b) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Accumulates `dW = inputᵀ·g` and `db = Σ_rows g`; returns `g·Wᵀ`.
pub fn linear_backward(
    input: &Matrix,
    weight: &mut ParamTensor,
    bias: &mut ParamTensor,
    grad_out: &Matrix,
) -> Result<Matrix, NnError> {
    if grad_out.cols() != weight.shape().1 || grad_out.rows() != input.rows() {
        return Err(NnError::shape("linear_backward", grad_out.shape(), weight.shape()));
    }
    let dw = input.t_matmul(grad_out)?;
    weight.grad.add_assign(&dw)?;
    let db = bias.grad.row_mut(0);
    for r in 0..grad_out.rows() {
        for (d, g) in db.iter_mut().zip(grad_out.row(r)) {
            *d += g;
        }
    }
    grad_out.matmul_t(&weight.value)
}

pub fn relu(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient through ReLU given the pre-activation input.
pub fn relu_backward(pre_activation: &Matrix, grad_out: &Matrix) -> Matrix {
    let mut g = grad_out.clone();
    for (gv, &x) in g.as_mut_slice().iter_mut().zip(pre_activation.as_slice()) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Row-wise softmax with max-shift.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Gradient wrt the logits given the softmax output and `dL/dprobs`.
pub fn softmax_rows_backward(probs: &Matrix, grad_probs: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let g = grad_probs.row(r);
        let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for (o, (pv, gv)) in out.row_mut(r).iter_mut().zip(p.iter().zip(g)) {
            *o = pv * (gv - inner);
        }
    }
    out
}

/// Values saved by [`layer_norm`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNormCache {
    /// The pre-affine normalized rows.
    pub fn normalized(&self) -> &Matrix {
        &self.normalized
    }
}

pub fn layer_norm(
    x: &Matrix,
    gain: &ParamTensor,
    shift: &ParamTensor,
    eps: f64,
) -> Result<(Matrix, LayerNormCache), NnError> {
    let d = x.cols();
    if gain.shape() != (1, d) || shift.shape() != (1, d) {
        return Err(NnError::shape("layer_norm", (1, d), gain.shape()));
    }
    let mut normalized = Matrix::zeros(x.rows(), d);
    let mut out = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    let g = gain.value.row(0);
    let b = shift.value.row(0);
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        let n_row = normalized.row_mut(r);
        for (n, v) in n_row.iter_mut().zip(row) {
            *n = (v - mean) * inv;
        }
        let n_row = normalized.row(r).to_vec();
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = n_row[c] * g[c] + b[c];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &mut ParamTensor,
    shift: &mut ParamTensor,
    grad_out: &Matrix,
) -> Result<Matrix, NnError> {
    let (rows, d) = cache.normalized.shape();
    if grad_out.shape() != (rows, d) {
        return Err(NnError::shape("layer_norm_backward", (rows, d), grad_out.shape()));
    }
    let mut dx = Matrix::zeros(rows, d);
    let g = gain.value.row(0).to_vec();
    for r in 0..rows {
        let n = cache.normalized.row(r);
        let go = grad_out.row(r);
        {
            let dg = gain.grad.row_mut(0);
            for c in 0..d {
                dg[c] += go[c] * n[c];
            }
        }
        {
            let db = shift.grad.row_mut(0);
            for c in 0..d {
                db[c] += go[c];
            }
        }
        let dn: Vec<f64> = (0..d).map(|c| go[c] * g[c]).collect();
        let mean_dn = dn.iter().sum::<f64>() / d as f64;
        let mean_dn_n = dn.iter().zip(n).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let inv = cache.inv_std[r];
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = inv * (dn[c] - mean_dn - n[c] * mean_dn_n);
        }
    }
    Ok(dx)
}

/// Values saved by [`masked_attention`] for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// `t×t` attention weights; columns of invalid keys are exactly zero.
    weights: Matrix,
    key_valid: Vec<bool>,
    scale: f64,
}

impl AttentionCache {
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }
}

/// Scaled dot-product attention where invalid keys receive exactly zero weight.
///
/// Invalid key/value rows are never read, so their contents cannot affect the output.
pub fn masked_attention(
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
    key_valid: &[bool],
) -> Result<(Matrix, AttentionCache), NnError> {
    let t = keys.rows();
    let dh = queries.cols();
    if keys.cols() != dh || values.rows() != t || key_valid.len() != t {
        return Err(NnError::shape("masked_attention", queries.shape(), keys.shape()));
    }
    if !key_valid.iter().any(|&m| m) {
        return Err(NnError::EmptyContext);
    }
    let scale = 1.0 / (dh as f64).sqrt();
    let tq = queries.rows();
    let mut weights = Matrix::zeros(tq, t);
    let mut out = Matrix::zeros(tq, values.cols());
    for i in 0..tq {
        let q = queries.row(i);
        let w_row = weights.row_mut(i);
        let mut max = f64::NEG_INFINITY;
        for j in 0..t {
            if key_valid[j] {
                let s = super::dot(q, keys.row(j)) * scale;
                w_row[j] = s;
                max = max.max(s);
            }
        }
        let mut sum = 0.0;
        for j in 0..t {
            if key_valid[j] {
                w_row[j] = (w_row[j] - max).exp();
                sum += w_row[j];
            }
        }
        for j in 0..t {
            if key_valid[j] {
                w_row[j] /= sum;
            }
        }
        let w_row = weights.row(i).to_vec();
        let o_row = out.row_mut(i);
        for j in 0..t {
            if key_valid[j] {
                let w = w_row[j];
                for (o, v) in o_row.iter_mut().zip(values.row(j)) {
                    *o += w * v;
                }
            }
        }
    }
    Ok((
        out,
        AttentionCache {
            weights,
            key_valid: key_valid.to_vec(),
            scale,
        },
    ))
}

/// Returns `(dQ, dK, dV)`. Rows of `dK`/`dV` for invalid keys are zero.
pub fn masked_attention_backward(
    cache: &AttentionCache,
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
    grad_out: &Matrix,
) -> Result<(Matrix, Matrix, Matrix), NnError> {
    let w = &cache.weights;
    if grad_out.rows() != w.rows() || grad_out.cols() != values.cols() {
        return Err(NnError::shape("masked_attention_backward", grad_out.shape(), values.shape()));
    }
    let t = keys.rows();
    let tq = queries.rows();
    let mut dq = Matrix::zeros(tq, queries.cols());
    let mut dk = Matrix::zeros(t, keys.cols());
    let mut dv = Matrix::zeros(t, values.cols());
    for i in 0..tq {
        let go = grad_out.row(i);
        let w_row = w.row(i);
        // dL/dw_ij = go · v_j
        let mut dw = vec![0.0; t];
        for j in 0..t {
            if cache.key_valid[j] {
                dw[j] = super::dot(go, values.row(j));
                let wij = w_row[j];
                for (d, g) in dv.row_mut(j).iter_mut().zip(go) {
                    *d += wij * g;
                }
            }
        }
        let inner: f64 = (0..t)
            .filter(|&j| cache.key_valid[j])
            .map(|j| w_row[j] * dw[j])
            .sum();
        for j in 0..t {
            if !cache.key_valid[j] {
                continue;
            }
            let ds = w_row[j] * (dw[j] - inner) * cache.scale;
            if ds == 0.0 {
                continue;
            }
            for (d, k) in dq.row_mut(i).iter_mut().zip(keys.row(j)) {
                *d += ds * k;
            }
            for (d, q) in dk.row_mut(j).iter_mut().zip(queries.row(i)) {
                *d += ds * q;
            }
        }
    }
    Ok((dq, dk, dv))
}

fn check_ce_inputs(
    probabilities: &Matrix,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<(), NnError> {
    if labels.len() != probabilities.rows() {
        return Err(NnError::DimensionMismatch {
            op: "cross_entropy",
            expected: format!("{} labels", probabilities.rows()),
            found: format!("{} labels", labels.len()),
        });
    }
    if class_weights.len() != probabilities.cols() {
        return Err(NnError::DimensionMismatch {
            op: "cross_entropy",
            expected: format!("{} class weights", probabilities.cols()),
            found: format!("{} class weights", class_weights.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= probabilities.cols()) {
        return Err(NnError::LabelOutOfRange {
            label: bad,
            classes: probabilities.cols(),
        });
    }
    if probabilities.rows() == 0 {
        return Err(NnError::EmptyBatch);
    }
    Ok(())
}

/// Mean over rows of `-ln p[y]`.
pub fn cross_entropy(probabilities: &Matrix, labels: &[usize]) -> Result<f64, NnError> {
    let ones = vec![1.0; probabilities.cols()];
    check_ce_inputs(probabilities, labels, &ones)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -probabilities.get(r, y).max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean over rows of `w[y] · (-ln p[y])`.
pub fn weighted_cross_entropy(
    probabilities: &Matrix,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<f64, NnError> {
    check_ce_inputs(probabilities, labels, class_weights)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| class_weights[y] * -probabilities.get(r, y).max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradient of [`weighted_cross_entropy`] wrt the logits that produced
/// `probabilities` through [`softmax_rows`]. Rows whose target probability sits
/// below the floor contribute zero, matching the clamped forward.
pub fn weighted_cross_entropy_backward(
    probabilities: &Matrix,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<Matrix, NnError> {
    check_ce_inputs(probabilities, labels, class_weights)?;
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(probabilities.rows(), probabilities.cols());
    for (r, &y) in labels.iter().enumerate() {
        if probabilities.get(r, y) < PROB_FLOOR {
            continue;
        }
        let w = class_weights[y] / n;
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            let target = if c == y { 1.0 } else { 0.0 };
            *g = w * (probabilities.get(r, c) - target);
        }
    }
    Ok(grad)
}
