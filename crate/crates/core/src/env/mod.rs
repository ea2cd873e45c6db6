//! Episodic environment, dual-precision policies, step encoder and rollouts.
//!
//! [`CriticalStepWorld`] is a synthetic multi-step task whose low/high policy
//! pair agrees closely at ordinary steps and diverges sharply at a few
//! construction-time-known critical steps, where the low policy's preferred
//! actions poison the episode.

mod config;
mod embed;
mod io;
mod policy;
mod remote;
pub mod rng;
mod rollout;
mod world;

pub use config::{ActionSpace, CriticalSteps, EnvConfig, HIGH_CORRECT_MASS};
pub use embed::StepEncoder;
pub use io::{read_trajectories, write_trajectories, TrajectoryRecord, TRAJECTORY_FORMAT_VERSION};
pub use policy::{
    policy_distribution, ActionPolicy, Precision, PolicyPair, SyntheticPolicy, DEFAULT_COSTS,
};
pub use remote::{RemotePolicy, DEFAULT_REMOTE_TIMEOUT};
pub use rollout::{Driver, EpisodeSeeds, Simulator, Trajectory, TrajectoryStep};
pub use world::{
    CriticalStepWorld, EnvState, EpisodeInstance, HistoryEntry, Milestone, StepOutcome, TASK_COUNT,
};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("step called on a terminal state")]
    TerminalState,
    #[error("action {action} outside action space of size {size}")]
    InvalidAction { action: usize, size: usize },
    #[error(transparent)]
    Router(#[from] crate::router::RouterError),
    #[error(transparent)]
    Divergence(#[from] crate::klst::KlError),
    #[error("remote policy timed out after {0:?}")]
    RemoteTimeout(std::time::Duration),
    #[error("malformed remote policy response: {0}")]
    RemoteMalformed(String),
    #[error("remote policy distribution sums to {sum}, not 1")]
    RemoteNotNormalized { sum: f64 },
    #[error("remote policy transport: {0}")]
    RemoteIo(std::io::Error),
    #[error("trajectory io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trajectory file line {line}: {message}")]
    Format { line: usize, message: String },
}
