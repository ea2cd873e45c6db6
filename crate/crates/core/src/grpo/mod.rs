//! Cost-aware group-relative policy optimization of the router.
//!
//! Each update samples `K_g` routed rollouts of one task instance, scores them
//! by success minus call and step costs, normalizes returns within the group
//! and takes one Adam step on the advantage-weighted log-likelihood of the
//! routing decisions plus a KL penalty toward the anchor.

mod loss;
mod reward;
mod train;

pub use loss::{
    grpo_loss, grpo_loss_and_grad, grpo_update, routing_kl_penalty, AnchorSnapshot, Decision,
    LossBreakdown, LossNormalization, TrajectoryGroup,
};
pub use reward::{group_advantages, trajectory_return, RewardConfig};
pub use train::{
    group_episode, train_grpo, train_grpo_with_fallback, write_curve_csv, GroupMetrics, GrpoConfig,
    GrpoOutcome, FALLBACK_LR_SCALE, MOVEMENT_THRESHOLD,
};

#[derive(Debug, thiserror::Error)]
pub enum GrpoError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("episode {episode} member {member} has no router input stored for step {t}")]
    MissingSequence { episode: u64, member: u64, t: usize },
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Router(#[from] crate::router::RouterError),
    #[error("curve export: {0}")]
    Csv(#[from] csv::Error),
    #[error("curve export: {0}")]
    Io(#[from] std::io::Error),
}
