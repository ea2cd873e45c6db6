//! Router forward pass, backward pass and routing decisions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{self, AttentionCache, LayerNormCache, Matrix};

use super::{EncoderLayerParams, RouterError, RouterParams, StepSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteMode {
    Sampled,
    Greedy,
}

/// Categorical over precision levels plus the chosen level.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDistribution {
    pub probs: Vec<f64>,
    pub chosen: usize,
    pub mode: RouteMode,
}

/// Index of the most recent valid step.
pub fn last_valid_index(mask: &[bool]) -> Result<usize, RouterError> {
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(RouterError::EmptySequence),
        n => Ok(n - 1),
    }
}

/// Hidden state of the most recent valid step.
pub fn pool_last_valid(hidden: &Matrix, mask: &[bool]) -> Result<Vec<f64>, RouterError> {
    let idx = last_valid_index(mask)?;
    if idx >= hidden.rows() {
        return Err(RouterError::InvalidSequence(format!(
            "mask names row {} of a {}-row hidden state",
            idx + 1,
            hidden.rows()
        )));
    }
    Ok(hidden.row(idx).to_vec())
}

/// Smallest index achieving the maximum, so ties resolve to the cheaper precision.
pub fn argmax_low(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw using one uniform variate.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    heads: Vec<AttentionCache>,
    concat: Matrix,
    drop1: Option<Matrix>,
    ln1: LayerNormCache,
    n1: Matrix,
    ffn_pre: Matrix,
    ffn_act: Matrix,
    drop2: Option<Matrix>,
    ln2: LayerNormCache,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    mask: Vec<bool>,
    layers: Vec<LayerCache>,
    hidden: Matrix,
    pooled_index: usize,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl ForwardPass {
    pub fn hidden(&self) -> &Matrix {
        &self.hidden
    }

    pub fn pooled(&self) -> &[f64] {
        self.hidden.row(self.pooled_index)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Mask after truncation.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Smallest `|x|` over the FFN ReLU inputs; the network is not
    /// differentiable where this is zero.
    pub fn relu_margin(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.ffn_pre.as_slice())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape is consistent")
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a.clone();
    for (o, m) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o *= m;
    }
    out
}

impl RouterParams {
    fn check_sequence(&self, seq: &StepSequence) -> Result<(), RouterError> {
        if seq.dim() != self.config().embed_dim {
            return Err(RouterError::InvalidSequence(format!(
                "step embeddings have dimension {}, router expects {}",
                seq.dim(),
                self.config().embed_dim
            )));
        }
        Ok(())
    }

    /// `z_i + P[i]` over the (truncated) sequence.
    pub fn add_positions(&self, seq: &StepSequence) -> Result<Matrix, RouterError> {
        self.check_sequence(seq)?;
        let seq = seq.truncated(self.config().max_len);
        let mut x = seq.embeddings().clone();
        for r in 0..x.rows() {
            for (v, p) in x.row_mut(r).iter_mut().zip(self.positional.value.row(r)) {
                *v += p;
            }
        }
        Ok(x)
    }

    /// Encoder hidden states for the truncated sequence.
    pub fn encode(&self, seq: &StepSequence) -> Result<Matrix, RouterError> {
        Ok(self.forward(seq)?.hidden)
    }

    /// Inference forward pass (dropout disabled).
    pub fn forward(&self, seq: &StepSequence) -> Result<ForwardPass, RouterError> {
        self.forward_impl::<ChaCha8Rng>(seq, None)
    }

    /// Training forward pass; dropout is drawn from `rng` when the configured rate is nonzero.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        seq: &StepSequence,
        rng: &mut R,
    ) -> Result<ForwardPass, RouterError> {
        self.forward_impl(seq, Some(rng))
    }

    fn forward_impl<R: Rng + ?Sized>(
        &self,
        seq: &StepSequence,
        mut rng: Option<&mut R>,
    ) -> Result<ForwardPass, RouterError> {
        let mut x = self.add_positions(seq)?;
        let mask = seq.truncated(self.config().max_len).mask().to_vec();
        let rate = self.config().dropout;
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let drop_rng = if rate > 0.0 { rng.as_deref_mut() } else { None };
            let (out, cache) = self.layer_forward(layer, x, &mask, drop_rng)?;
            layers.push(cache);
            x = out;
        }
        let pooled_index = last_valid_index(&mask)?;
        let pooled = Matrix::row_vector(x.row(pooled_index));
        let logits = self.head.forward(&pooled)?.into_vec();
        let mut probs = logits.clone();
        nn::softmax_in_place(&mut probs);
        Ok(ForwardPass {
            mask,
            layers,
            hidden: x,
            pooled_index,
            logits,
            probs,
        })
    }

    fn layer_forward<R: Rng + ?Sized>(
        &self,
        layer: &EncoderLayerParams,
        input: Matrix,
        mask: &[bool],
        mut rng: Option<&mut R>,
    ) -> Result<(Matrix, LayerCache), RouterError> {
        let cfg = self.config();
        let dh = cfg.head_dim();
        let t = input.rows();
        let q = layer.query.forward(&input)?;
        let k = layer.key.forward(&input)?;
        let v = layer.value.forward(&input)?;
        let mut concat = Matrix::zeros(t, cfg.embed_dim);
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (out, cache) = nn::masked_attention(
                &q.slice_cols(lo, hi),
                &k.slice_cols(lo, hi),
                &v.slice_cols(lo, hi),
                mask,
            )?;
            concat.set_cols(lo, &out);
            heads.push(cache);
        }
        let mut attn = layer.attn_out.forward(&concat)?;
        let drop1 = rng
            .as_deref_mut()
            .map(|r| dropout_mask(t, cfg.embed_dim, cfg.dropout, r));
        if let Some(m) = &drop1 {
            attn = hadamard(&attn, m);
        }
        let r1 = input.add(&attn)?;
        let (n1, ln1) = layer.norm1.forward(&r1)?;
        let ffn_pre = layer.ffn_in.forward(&n1)?;
        let ffn_act = nn::relu(&ffn_pre);
        let mut ffn = layer.ffn_out.forward(&ffn_act)?;
        let drop2 = rng.map(|r| dropout_mask(t, cfg.embed_dim, cfg.dropout, r));
        if let Some(m) = &drop2 {
            ffn = hadamard(&ffn, m);
        }
        let r2 = n1.add(&ffn)?;
        let (out, ln2) = layer.norm2.forward(&r2)?;
        Ok((
            out,
            LayerCache {
                input,
                q,
                k,
                v,
                heads,
                concat,
                drop1,
                ln1,
                n1,
                ffn_pre,
                ffn_act,
                drop2,
                ln2,
            },
        ))
    }

    /// Accumulates parameter gradients for `dL/dlogits = grad_logits`.
    pub fn backward(&mut self, pass: &ForwardPass, grad_logits: &[f64]) -> Result<(), RouterError> {
        let k = self.config().num_precisions;
        if grad_logits.len() != k {
            return Err(RouterError::InvalidSequence(format!(
                "expected {k} logit gradients, got {}",
                grad_logits.len()
            )));
        }
        let pooled = Matrix::row_vector(pass.pooled());
        let d_pooled = self
            .head
            .backward(&pooled, &Matrix::row_vector(grad_logits))?;
        let d = self.config().embed_dim;
        let mut grad = Matrix::zeros(pass.hidden.rows(), d);
        grad.row_mut(pass.pooled_index)
            .copy_from_slice(d_pooled.row(0));
        for idx in (0..self.layers.len()).rev() {
            grad = self.layer_backward(idx, &pass.layers[idx], &grad)?;
        }
        for r in 0..grad.rows() {
            for (p, g) in self.positional.grad.row_mut(r).iter_mut().zip(grad.row(r)) {
                *p += g;
            }
        }
        Ok(())
    }

    fn layer_backward(
        &mut self,
        idx: usize,
        cache: &LayerCache,
        grad_out: &Matrix,
    ) -> Result<Matrix, RouterError> {
        let cfg = *self.config();
        let dh = cfg.head_dim();
        let layer = &mut self.layers[idx];
        let d_r2 = layer.norm2.backward(&cache.ln2, grad_out)?;
        let mut d_n1 = d_r2.clone();
        let d_ffn = match &cache.drop2 {
            Some(m) => hadamard(&d_r2, m),
            None => d_r2,
        };
        let d_act = layer.ffn_out.backward(&cache.ffn_act, &d_ffn)?;
        let d_pre = nn::relu_backward(&cache.ffn_pre, &d_act);
        d_n1.add_assign(&layer.ffn_in.backward(&cache.n1, &d_pre)?)?;
        let d_r1 = layer.norm1.backward(&cache.ln1, &d_n1)?;
        let mut d_input = d_r1.clone();
        let d_attn = match &cache.drop1 {
            Some(m) => hadamard(&d_r1, m),
            None => d_r1,
        };
        let d_concat = layer.attn_out.backward(&cache.concat, &d_attn)?;
        let t = cache.input.rows();
        let mut dq = Matrix::zeros(t, cfg.embed_dim);
        let mut dk = Matrix::zeros(t, cfg.embed_dim);
        let mut dv = Matrix::zeros(t, cfg.embed_dim);
        for (h, head) in cache.heads.iter().enumerate() {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (gq, gk, gv) = nn::masked_attention_backward(
                head,
                &cache.q.slice_cols(lo, hi),
                &cache.k.slice_cols(lo, hi),
                &cache.v.slice_cols(lo, hi),
                &d_concat.slice_cols(lo, hi),
            )?;
            dq.set_cols(lo, &gq);
            dk.set_cols(lo, &gk);
            dv.set_cols(lo, &gv);
        }
        d_input.add_assign(&layer.query.backward(&cache.input, &dq)?)?;
        d_input.add_assign(&layer.key.backward(&cache.input, &dk)?)?;
        d_input.add_assign(&layer.value.backward(&cache.input, &dv)?)?;
        Ok(d_input)
    }

    /// Routing probabilities `softmax(W·h* + b)`.
    pub fn probabilities(&self, seq: &StepSequence) -> Result<Vec<f64>, RouterError> {
        Ok(self.forward(seq)?.probs)
    }
}

/// Computes the routing distribution and picks a precision level.
///
/// Greedy mode breaks ties toward the lower (cheaper) index; sampled mode
/// consumes exactly one uniform draw from `rng`.
pub fn route<R: Rng + ?Sized>(
    seq: &StepSequence,
    params: &RouterParams,
    mode: RouteMode,
    rng: &mut R,
) -> Result<RoutingDistribution, RouterError> {
    let probs = params.probabilities(seq)?;
    let chosen = match mode {
        RouteMode::Greedy => argmax_low(&probs),
        RouteMode::Sampled => sample_index(&probs, rng),
    };
    Ok(RoutingDistribution {
        probs,
        chosen,
        mode,
    })
}
