//! Dense numerical kernel: matrices, layer forward/backward passes and Adam.
//!
//! Shapes in the router are tiny (`d ≤ 128`, `t ≤ 64`), so everything is
//! plain row-major `f64` with hand-written backward passes.

mod matrix;
mod ops;
mod param;

pub use matrix::{dot, Matrix};
pub use ops::{
    cross_entropy, layer_norm, layer_norm_backward, linear_backward, linear_forward,
    masked_attention, masked_attention_backward, relu, relu_backward, softmax_in_place,
    softmax_rows, softmax_rows_backward, weighted_cross_entropy, weighted_cross_entropy_backward,
    AttentionCache, LayerNormCache, LAYER_NORM_EPS, PROB_FLOOR,
};
pub use param::{adam_step, AdamConfig, ParamTensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("{op}: dimension mismatch, expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("attention has no valid key positions")]
    EmptyContext,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
}

impl NnError {
    pub(crate) fn shape(op: &'static str, expected: (usize, usize), found: (usize, usize)) -> Self {
        NnError::DimensionMismatch {
            op,
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        }
    }
}
