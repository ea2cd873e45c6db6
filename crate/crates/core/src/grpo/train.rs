use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::rng::derive_seed;
use crate::env::{Driver, EpisodeSeeds, Simulator, Trajectory};
use crate::router::{RouteMode, RouterParams, StepSequence, HIGH_PRECISION};

use super::{grpo_update, AnchorSnapshot, GrpoError, LossNormalization, RewardConfig, TrajectoryGroup};

/// Parameters moving less than this (mean absolute change of the high-precision
/// probability over visited states) count as no measurable movement.
pub const MOVEMENT_THRESHOLD: f64 = 1e-2;
/// Learning-rate multiplier tried when the nominal rate does not move the router.
pub const FALLBACK_LR_SCALE: f64 = 100.0;

const GRPO_EPISODE_TAG: u64 = 0x6772_706f;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    /// Trajectories per group, `K_g`.
    pub group_size: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    /// Multiplier on `learning_rate`.
    pub lr_scale: f64,
    /// Total training episodes; `episode_budget / group_size` updates.
    pub episode_budget: usize,
    pub normalization: LossNormalization,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            beta: 0.02,
            epsilon: 1e-8,
            learning_rate: 1e-6,
            lr_scale: 1.0,
            episode_budget: 120,
            normalization: LossNormalization::Trajectory,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn effective_learning_rate(&self) -> f64 {
        self.learning_rate * self.lr_scale
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let mut problems = Vec::new();
        if self.group_size < 2 {
            problems.push(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if self.episode_budget < self.group_size {
            problems.push(format!(
                "episode_budget {} is smaller than one group of {}",
                self.episode_budget, self.group_size
            ));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            problems.push(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            problems.push(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.effective_learning_rate() > 0.0 && self.effective_learning_rate().is_finite()) {
            problems.push("learning_rate * lr_scale must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(GrpoError::InvalidConfig(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group_index: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub mean_high_ratio: f64,
    pub policy_loss: f64,
    pub kl_penalty: f64,
}

#[derive(Debug, Clone)]
pub struct GrpoOutcome {
    pub params: RouterParams,
    pub curve: Vec<GroupMetrics>,
    pub lr_scale: f64,
    /// Mean `|Δ π(high)|` from the initial parameters over all visited states.
    pub movement: f64,
}

/// Episode id of group `g`; every member of the group shares it.
pub fn group_episode(seed: u64, g: usize) -> u64 {
    derive_seed(&[GRPO_EPISODE_TAG, seed, g as u64])
}

fn sample_group(
    sim: &Simulator,
    params: &RouterParams,
    cfg: &GrpoConfig,
    g: usize,
) -> Result<Vec<Trajectory>, GrpoError> {
    let driver = Driver::Router {
        params: Arc::new(params.snapshot()),
        mode: RouteMode::Sampled,
    };
    let episode = group_episode(cfg.seed, g);
    (0..cfg.group_size as u64)
        .into_par_iter()
        .map(|member| sim.rollout(&driver, EpisodeSeeds { episode, member }))
        .collect::<Result<Vec<_>, _>>()
        .map_err(GrpoError::from)
}

/// Group-relative policy optimization from `init`, anchored to `init`.
pub fn train_grpo(
    sim: &Simulator,
    init: &RouterParams,
    cfg: &GrpoConfig,
    reward: &RewardConfig,
) -> Result<GrpoOutcome, GrpoError> {
    cfg.validate()?;
    reward.validate().map_err(GrpoError::InvalidConfig)?;
    let anchor = AnchorSnapshot::new(init);
    let mut params = init.snapshot();
    let max_len = params.config().max_len;
    let n_groups = cfg.episode_budget / cfg.group_size;
    if !cfg.episode_budget.is_multiple_of(cfg.group_size) {
        log::warn!(
            "episode budget {} is not a multiple of the group size; {} episodes unused",
            cfg.episode_budget,
            cfg.episode_budget % cfg.group_size
        );
    }
    let mut curve = Vec::with_capacity(n_groups);
    let mut seen: Vec<StepSequence> = Vec::new();
    for g in 0..n_groups {
        let trajectories = sample_group(sim, &params, cfg, g)?;
        let group = TrajectoryGroup::new(trajectories, reward, cfg.epsilon, max_len)?;
        let k = group.trajectories.len() as f64;
        let mean_return = group.returns.iter().sum::<f64>() / k;
        let success_rate = group.trajectories.iter().filter(|t| t.success).count() as f64 / k;
        let mean_high_ratio = group.trajectories.iter().map(Trajectory::high_ratio).sum::<f64>() / k;
        seen.extend(group.decisions.iter().flatten().map(|d| d.sequence.clone()));
        let loss = grpo_update(&mut params, &anchor, std::slice::from_ref(&group), cfg)?;
        log::debug!("group {g}: return {mean_return:.4}, policy {:.5}, kl {:.3e}", loss.policy, loss.kl);
        curve.push(GroupMetrics {
            group_index: g,
            mean_return,
            success_rate,
            mean_high_ratio,
            policy_loss: loss.policy,
            kl_penalty: loss.kl,
        });
    }
    let movement = probability_movement(anchor.params(), &params, &seen)?;
    Ok(GrpoOutcome {
        params,
        curve,
        lr_scale: cfg.lr_scale,
        movement,
    })
}

fn probability_movement(a: &RouterParams, b: &RouterParams, states: &[StepSequence]) -> Result<f64, GrpoError> {
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in states {
        let pa = a.probabilities(s)?[HIGH_PRECISION];
        let pb = b.probabilities(s)?[HIGH_PRECISION];
        total += (pa - pb).abs();
    }
    Ok(total / states.len() as f64)
}

/// Runs [`train_grpo`]; if the router did not measurably move, reruns with the
/// learning rate multiplied by [`FALLBACK_LR_SCALE`]. The scale used is in the outcome.
pub fn train_grpo_with_fallback(
    sim: &Simulator,
    init: &RouterParams,
    cfg: &GrpoConfig,
    reward: &RewardConfig,
) -> Result<GrpoOutcome, GrpoError> {
    let first = train_grpo(sim, init, cfg, reward)?;
    if first.movement >= MOVEMENT_THRESHOLD {
        return Ok(first);
    }
    log::info!(
        "router moved {:.2e} at lr {:.1e}; retrying with lr x{FALLBACK_LR_SCALE}",
        first.movement,
        cfg.effective_learning_rate()
    );
    let scaled = GrpoConfig {
        lr_scale: cfg.lr_scale * FALLBACK_LR_SCALE,
        ..*cfg
    };
    train_grpo(sim, init, &scaled, reward)
}

pub fn write_curve_csv(path: impl AsRef<Path>, curve: &[GroupMetrics]) -> Result<(), GrpoError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in curve {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
