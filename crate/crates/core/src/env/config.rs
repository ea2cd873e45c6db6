use serde::{Deserialize, Serialize};

use super::EnvError;

/// Probability mass the high-precision policy puts on correct continuations.
pub const HIGH_CORRECT_MASS: f64 = 0.99;

/// Discrete action ids `0..size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub size: usize,
}

impl ActionSpace {
    pub fn contains(&self, action: usize) -> bool {
        action < self.size
    }
}

/// Where critical decisions sit along the path to the goal.
///
/// Positions are 1-based progress milestones; on a path without stalls the
/// milestone index equals the step index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalSteps {
    /// This many distinct positions drawn per episode.
    Seeded(usize),
    /// The same positions in every episode.
    Fixed(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Maximum number of steps `T_max`.
    pub horizon: usize,
    pub action_count: usize,
    /// Milestones to pass before the goal is reached.
    pub goal_length: usize,
    pub critical_steps: CriticalSteps,
    /// Actions that pass a critical milestone; every other action poisons the episode.
    pub n_correct_paths: usize,
    /// Upper bound on KL(low‖high) at ordinary steps.
    pub divergence_low: f64,
    /// Lower bound on KL(low‖high) at critical steps.
    pub divergence_high: f64,
    /// Dimension of the hashed step embeddings.
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            action_count: 6,
            goal_length: 11,
            critical_steps: CriticalSteps::Seeded(2),
            n_correct_paths: 1,
            divergence_low: 0.01,
            divergence_high: 1.0,
            embed_dim: 64,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn action_space(&self) -> ActionSpace {
        ActionSpace {
            size: self.action_count,
        }
    }

    /// Actions that advance at an ordinary milestone: a strict majority.
    pub fn advancing_count(&self) -> usize {
        (self.action_count / 2 + 1).min(self.action_count)
    }

    /// Largest KL(low‖high) reachable at a critical step, attained when the
    /// low policy moves all its mass onto the poisoning actions.
    pub fn max_critical_divergence(&self) -> f64 {
        -(1.0 - HIGH_CORRECT_MASS).ln()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let mut problems = Vec::new();
        if self.horizon == 0 {
            problems.push("horizon must be at least 1".to_string());
        }
        if self.action_count < 2 {
            problems.push(format!("action_count must be >= 2, got {}", self.action_count));
        }
        if self.goal_length == 0 || self.goal_length > self.horizon {
            problems.push(format!(
                "goal_length must be in [1, horizon={}], got {}",
                self.horizon, self.goal_length
            ));
        }
        match &self.critical_steps {
            CriticalSteps::Seeded(n) if *n > self.goal_length => problems.push(format!(
                "{n} critical steps do not fit in goal_length {}",
                self.goal_length
            )),
            CriticalSteps::Fixed(positions) => {
                let mut sorted = positions.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != positions.len() {
                    problems.push("critical step positions must be distinct".to_string());
                }
                if positions
                    .iter()
                    .any(|&p| p == 0 || p > self.goal_length.min(self.horizon))
                {
                    problems.push(format!(
                        "critical step positions must lie in [1, {}]",
                        self.goal_length.min(self.horizon)
                    ));
                }
            }
            _ => {}
        }
        if self.n_correct_paths == 0 || self.n_correct_paths >= self.action_count {
            problems.push(format!(
                "n_correct_paths must be in [1, action_count), got {}",
                self.n_correct_paths
            ));
        }
        if !(self.divergence_low >= 0.0 && self.divergence_low.is_finite()) {
            problems.push(format!("divergence_low must be >= 0, got {}", self.divergence_low));
        }
        // Equal bounds are accepted; calibration then reports the modes as unseparated.
        if self.divergence_high.is_nan() || self.divergence_high < self.divergence_low {
            problems.push(format!(
                "divergence_high ({}) must be at least divergence_low ({})",
                self.divergence_high, self.divergence_low
            ));
        }
        if self.divergence_high >= self.max_critical_divergence() {
            problems.push(format!(
                "divergence_high {} is unreachable; the maximum is {:.4}",
                self.divergence_high,
                self.max_critical_divergence()
            ));
        }
        if self.embed_dim == 0 {
            problems.push("embed_dim must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(EnvError::InvalidConfig(problems.join("; ")))
        }
    }
}
