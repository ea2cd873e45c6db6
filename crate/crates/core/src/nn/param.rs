use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;

/// A learnable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub value: Matrix,
    pub grad: Matrix,
    adam_m: Matrix,
    adam_v: Matrix,
    step_count: u64,
}

impl ParamTensor {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Matrix::zeros(rows, cols))
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::new(Matrix::filled(rows, cols, value))
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self::new(Matrix::from_vec(rows, cols, data).expect("shape is consistent"))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn adam_moments(&self) -> (&Matrix, &Matrix) {
        (&self.adam_m, &self.adam_v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Applies one bias-corrected Adam update from `param.grad`, then zeroes the gradient.
pub fn adam_step(param: &mut ParamTensor, config: &AdamConfig) {
    param.step_count += 1;
    let t = param.step_count as i32;
    let correction1 = 1.0 - config.beta1.powi(t);
    let correction2 = 1.0 - config.beta2.powi(t);
    let values = param.value.as_mut_slice();
    let grads = param.grad.as_mut_slice();
    let ms = param.adam_m.as_mut_slice();
    let vs = param.adam_v.as_mut_slice();
    for i in 0..values.len() {
        let g = grads[i];
        ms[i] = config.beta1 * ms[i] + (1.0 - config.beta1) * g;
        vs[i] = config.beta2 * vs[i] + (1.0 - config.beta2) * g * g;
        let m_hat = ms[i] / correction1;
        let v_hat = vs[i] / correction2;
        values[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        grads[i] = 0.0;
    }
}
