use serde::{Deserialize, Serialize};

use crate::env::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Cost per high-precision call.
    pub lambda_high: f64,
    /// Cost per step.
    pub lambda_step: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_high: 0.02,
            lambda_step: 0.005,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.lambda_high) && ok(self.lambda_step) {
            Ok(())
        } else {
            Err(format!(
                "reward costs must be finite and >= 0, got lambda_high={} lambda_step={}",
                self.lambda_high, self.lambda_step
            ))
        }
    }

    /// `1[success] − λ_high·S − λ_step·T`.
    pub fn score(&self, success: bool, high_calls: usize, total_steps: usize) -> f64 {
        f64::from(u8::from(success))
            - self.lambda_high * high_calls as f64
            - self.lambda_step * total_steps as f64
    }
}

pub fn trajectory_return(traj: &Trajectory, cfg: &RewardConfig) -> f64 {
    cfg.score(traj.success, traj.high_calls, traj.total_steps)
}

/// `(R_i − μ) / (σ + ε)` with the population standard deviation.
pub fn group_advantages(returns: &[f64], epsilon: f64) -> Vec<f64> {
    if returns.is_empty() {
        return Vec::new();
    }
    if returns.iter().all(|&r| r == returns[0]) {
        return vec![0.0; returns.len()];
    }
    let n = returns.len() as f64;
    let rough = returns.iter().sum::<f64>() / n;
    // Second pass removes the rounding error of the first, which the division
    // by a small sigma would otherwise amplify.
    let mean = rough + returns.iter().map(|r| r - rough).sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    returns.iter().map(|r| (r - mean) / (std + epsilon)).collect()
}
