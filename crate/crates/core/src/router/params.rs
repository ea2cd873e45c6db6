use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{self, AdamConfig, LayerNormCache, Matrix, NnError, ParamTensor};

use super::{RouterConfig, RouterError};

/// Affine layer `x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Dense {
    fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            weight: ParamTensor::uniform(d_in, d_out, d_in, rng),
            bias: ParamTensor::uniform(1, d_out, d_in, rng),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, NnError> {
        nn::linear_forward(x, &self.weight, &self.bias)
    }

    pub fn backward(&mut self, x: &Matrix, grad_out: &Matrix) -> Result<Matrix, NnError> {
        nn::linear_backward(x, &mut self.weight, &mut self.bias, grad_out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: ParamTensor,
    pub shift: ParamTensor,
}

impl LayerNormParams {
    fn init(d: usize) -> Self {
        Self {
            gain: ParamTensor::filled(1, d, 1.0),
            shift: ParamTensor::zeros(1, d),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LayerNormCache), NnError> {
        nn::layer_norm(x, &self.gain, &self.shift, nn::LAYER_NORM_EPS)
    }

    pub fn backward(&mut self, cache: &LayerNormCache, grad_out: &Matrix) -> Result<Matrix, NnError> {
        nn::layer_norm_backward(cache, &mut self.gain, &mut self.shift, grad_out)
    }
}

/// One post-norm encoder block: attention, add, norm, ReLU FFN, add, norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub attn_out: Dense,
    pub norm1: LayerNormParams,
    pub ffn_in: Dense,
    pub ffn_out: Dense,
    pub norm2: LayerNormParams,
}

impl EncoderLayerParams {
    fn init<R: Rng + ?Sized>(cfg: &RouterConfig, rng: &mut R) -> Self {
        let d = cfg.embed_dim;
        Self {
            query: Dense::init(d, d, rng),
            key: Dense::init(d, d, rng),
            value: Dense::init(d, d, rng),
            attn_out: Dense::init(d, d, rng),
            norm1: LayerNormParams::init(d),
            ffn_in: Dense::init(d, cfg.ffn_dim, rng),
            ffn_out: Dense::init(cfg.ffn_dim, d, rng),
            norm2: LayerNormParams::init(d),
        }
    }

    fn tensors(&self) -> [&ParamTensor; 16] {
        [
            &self.query.weight,
            &self.query.bias,
            &self.key.weight,
            &self.key.bias,
            &self.value.weight,
            &self.value.bias,
            &self.attn_out.weight,
            &self.attn_out.bias,
            &self.norm1.gain,
            &self.norm1.shift,
            &self.ffn_in.weight,
            &self.ffn_in.bias,
            &self.ffn_out.weight,
            &self.ffn_out.bias,
            &self.norm2.gain,
            &self.norm2.shift,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut ParamTensor; 16] {
        [
            &mut self.query.weight,
            &mut self.query.bias,
            &mut self.key.weight,
            &mut self.key.bias,
            &mut self.value.weight,
            &mut self.value.bias,
            &mut self.attn_out.weight,
            &mut self.attn_out.bias,
            &mut self.norm1.gain,
            &mut self.norm1.shift,
            &mut self.ffn_in.weight,
            &mut self.ffn_in.bias,
            &mut self.ffn_out.weight,
            &mut self.ffn_out.bias,
            &mut self.norm2.gain,
            &mut self.norm2.shift,
        ]
    }
}

/// All learnable router parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterParams {
    config: RouterConfig,
    /// Learned absolute positions, `max_len × d`.
    pub positional: ParamTensor,
    pub layers: Vec<EncoderLayerParams>,
    /// `d × K` projection onto precision logits.
    pub head: Dense,
}

impl RouterParams {
    pub fn new(config: RouterConfig, seed: u64) -> Result<Self, RouterError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init(config, &mut rng)
    }

    pub fn init<R: Rng + ?Sized>(config: RouterConfig, rng: &mut R) -> Result<Self, RouterError> {
        config.validate()?;
        let d = config.embed_dim;
        let positional = ParamTensor::uniform(config.max_len, d, d, rng);
        let layers = (0..config.num_layers)
            .map(|_| EncoderLayerParams::init(&config, rng))
            .collect();
        let head = Dense::init(d, config.num_precisions, rng);
        Ok(Self {
            config,
            positional,
            layers,
            head,
        })
    }

    pub fn config(&self) -> &RouterConfig {
        &self.config
    }

    /// Every tensor in declaration order: positions, layers, head.
    pub fn tensors(&self) -> Vec<&ParamTensor> {
        let mut out = vec![&self.positional];
        for layer in &self.layers {
            out.extend(layer.tensors());
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = vec![&mut self.positional];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    pub fn adam_step(&mut self, config: &AdamConfig) {
        for t in self.tensors_mut() {
            nn::adam_step(t, config);
        }
    }

    /// Scales every accumulated gradient, e.g. to average over a batch.
    pub fn scale_grads(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.grad.as_mut_slice().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// All parameter values flattened in declaration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.value.as_slice().iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.grad.as_slice().iter().copied())
            .collect()
    }

    /// Overwrites parameter values from a flat vector in declaration order.
    pub fn set_flat_values(&mut self, values: &[f64]) -> Result<(), RouterError> {
        if values.len() != self.num_parameters() {
            return Err(RouterError::InvalidConfig(format!(
                "expected {} parameter values, got {}",
                self.num_parameters(),
                values.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.value.len();
            t.value
                .as_mut_slice()
                .copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// A copy holding the same values with fresh gradient and optimizer state.
    pub fn snapshot(&self) -> Self {
        let mut copy = self.clone();
        for t in copy.tensors_mut() {
            *t = ParamTensor::new(t.value.clone());
        }
        copy
    }
}
