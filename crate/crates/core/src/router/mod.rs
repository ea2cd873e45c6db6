//! Step-level precision router.
//!
//! Step embeddings get learned absolute positions added, pass through a
//! post-norm Transformer encoder with key masking, and the hidden state of
//! the last valid step is projected onto a softmax over precision levels.
//! Index 0 is the low (cheap) precision, index 1 the high one.

mod checkpoint;
mod config;
mod network;
mod params;
mod sequence;

pub use checkpoint::{
    load_params, params_from_bytes, params_to_bytes, save_params, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::RouterConfig;
pub use network::{
    argmax_low, last_valid_index, pool_last_valid, route, sample_index, ForwardPass, RouteMode,
    RoutingDistribution,
};
pub use params::{Dense, EncoderLayerParams, LayerNormParams, RouterParams};
pub use sequence::StepSequence;

/// Precision index of the cheap model.
pub const LOW_PRECISION: usize = 0;
/// Precision index of the expensive model.
pub const HIGH_PRECISION: usize = 1;

#[derive(Debug, thiserror::Error)]
pub enum RouterError {
    #[error("invalid router config: {0}")]
    InvalidConfig(String),
    #[error("invalid step sequence: {0}")]
    InvalidSequence(String),
    #[error("step sequence has no valid positions")]
    EmptySequence,
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error("checkpoint config mismatch: file has {found:?}, expected {expected:?}")]
    ConfigMismatch {
        found: Box<RouterConfig>,
        expected: Box<RouterConfig>,
    },
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}
