//! Divergence-guided supervised training of the router.
//!
//! High-precision rollouts record `D_t = KL(low ‖ high)` at every step. Only
//! successful episodes are kept; each step is labeled positive when its value
//! reaches the `τ` quantile of the pooled empirical CDF, and the router is
//! fit with class-balanced cross-entropy.

mod dataset;
mod kl;
mod labels;
mod train;

pub use dataset::{
    collect, read_records, records_from_trajectories, write_records, Collection, KlRecord,
    SupervisionDataset,
};
pub use kl::{kl_divergence, KlError};
pub use labels::{class_weights, label, label_values, EmpiricalCdf, LabelingConfig, TieRule};
pub use train::{
    predict, train_klst, Classification, EpochMetrics, KlstOutcome, KlstTrainConfig, Selection,
};

#[derive(Debug, thiserror::Error)]
pub enum KlstError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("no successful episodes in {attempted} attempts; check the environment config and policy pair")]
    NoSuccesses { attempted: usize },
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Router(#[from] crate::router::RouterError),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
}
