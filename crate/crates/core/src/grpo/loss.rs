use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::nn::{AdamConfig, PROB_FLOOR};
use crate::router::{RouterParams, StepSequence};

use super::{group_advantages, trajectory_return, GrpoConfig, GrpoError, RewardConfig};

/// Frozen copy of the parameters the KL penalty anchors to.
#[derive(Debug, Clone)]
pub struct AnchorSnapshot {
    params: RouterParams,
}

impl AnchorSnapshot {
    pub fn new(params: &RouterParams) -> Self {
        Self {
            params: params.snapshot(),
        }
    }

    pub fn params(&self) -> &RouterParams {
        &self.params
    }
}

/// How the per-trajectory log-probability sum is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNormalization {
    /// `−mean_i A_i Σ_t log π(r_t)`.
    Trajectory,
    /// Divides each trajectory's sum by its length.
    PerStep,
}

/// One decision to re-score: the router input and the precision taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub sequence: StepSequence,
    pub chosen: usize,
}

/// `K_g` rollouts of one task instance with their returns and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGroup {
    pub trajectories: Vec<Trajectory>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Per trajectory, the decisions in step order.
    pub decisions: Vec<Vec<Decision>>,
}

impl TrajectoryGroup {
    pub fn new(
        trajectories: Vec<Trajectory>,
        reward: &RewardConfig,
        epsilon: f64,
        max_len: usize,
    ) -> Result<Self, GrpoError> {
        let returns: Vec<f64> = trajectories
            .iter()
            .map(|t| trajectory_return(t, reward))
            .collect();
        let advantages = group_advantages(&returns, epsilon);
        let decisions = trajectories
            .iter()
            .map(|traj| {
                (1..=traj.steps.len())
                    .map(|t| {
                        let sequence = traj.sequence_at(t, max_len).ok_or(GrpoError::MissingSequence {
                            episode: traj.episode_seed,
                            member: traj.member,
                            t,
                        })?;
                        Ok(Decision {
                            sequence,
                            chosen: traj.steps[t - 1].precision,
                        })
                    })
                    .collect::<Result<Vec<_>, GrpoError>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            trajectories,
            returns,
            advantages,
            decisions,
        })
    }

    /// A group from explicit decisions and advantages, e.g. for fixtures.
    pub fn from_decisions(decisions: Vec<Vec<Decision>>, advantages: Vec<f64>) -> Self {
        Self {
            trajectories: Vec::new(),
            returns: vec![0.0; advantages.len()],
            advantages,
            decisions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub policy: f64,
    /// Mean `KL(π_θ ‖ π_θ₀)` over visited states, before the `β` factor.
    pub kl: f64,
    pub total: f64,
}

fn kl_and_grad(p: &[f64], q: &[f64]) -> (f64, Vec<f64>) {
    let logs: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln())
        .collect();
    let kl: f64 = p.iter().zip(&logs).map(|(pi, l)| pi * l).sum();
    let grad = p.iter().zip(&logs).map(|(pi, l)| pi * (l - kl)).collect();
    (kl, grad)
}

fn visited(groups: &[TrajectoryGroup]) -> usize {
    groups.iter().flat_map(|g| &g.decisions).map(Vec::len).sum()
}

/// Mean KL between current and anchor routing distributions over the given states.
pub fn routing_kl_penalty(
    params: &RouterParams,
    anchor: &AnchorSnapshot,
    sequences: &[StepSequence],
) -> Result<f64, GrpoError> {
    if sequences.is_empty() {
        return Err(GrpoError::InvalidConfig("KL penalty over no states".into()));
    }
    let mut total = 0.0;
    for seq in sequences {
        let p = params.probabilities(seq)?;
        let q = anchor.params.probabilities(seq)?;
        total += kl_and_grad(&p, &q).0;
    }
    Ok(total / sequences.len() as f64)
}

fn loss_impl(
    params: &mut RouterParams,
    anchor: &AnchorSnapshot,
    groups: &[TrajectoryGroup],
    cfg: &GrpoConfig,
    accumulate: bool,
) -> Result<LossBreakdown, GrpoError> {
    let n_traj: usize = groups.iter().map(|g| g.decisions.len()).sum();
    let m = visited(groups);
    if n_traj == 0 || m == 0 {
        return Err(GrpoError::InvalidConfig("update batch has no decisions".into()));
    }
    let mut policy = 0.0;
    let mut kl_sum = 0.0;
    for g in groups {
        for (adv, decisions) in g.advantages.iter().zip(&g.decisions) {
            let scale = match cfg.normalization {
                LossNormalization::Trajectory => adv / n_traj as f64,
                LossNormalization::PerStep => adv / (n_traj * decisions.len().max(1)) as f64,
            };
            for d in decisions {
                let pass = params.forward(&d.sequence)?;
                let p = pass.probs();
                let q = anchor.params.probabilities(&d.sequence)?;
                policy -= scale * p[d.chosen].max(PROB_FLOOR).ln();
                let (kl, kl_grad) = kl_and_grad(p, &q);
                kl_sum += kl;
                if accumulate {
                    let grad: Vec<f64> = p
                        .iter()
                        .zip(&kl_grad)
                        .enumerate()
                        .map(|(k, (&pk, &gk))| {
                            let onehot = if k == d.chosen { 1.0 } else { 0.0 };
                            -scale * (onehot - pk) + cfg.beta / m as f64 * gk
                        })
                        .collect();
                    params.backward(&pass, &grad)?;
                }
            }
        }
    }
    let kl = kl_sum / m as f64;
    Ok(LossBreakdown {
        policy,
        kl,
        total: policy + cfg.beta * kl,
    })
}

/// `−E[A Σ_t log π_θ(r_t)] + β·KL(π_θ ‖ π_θ₀)` without touching gradients.
pub fn grpo_loss(
    params: &RouterParams,
    anchor: &AnchorSnapshot,
    groups: &[TrajectoryGroup],
    cfg: &GrpoConfig,
) -> Result<LossBreakdown, GrpoError> {
    let mut scratch = params.clone();
    loss_impl(&mut scratch, anchor, groups, cfg, false)
}

/// Evaluates the loss and accumulates its gradient into `params` (after zeroing).
pub fn grpo_loss_and_grad(
    params: &mut RouterParams,
    anchor: &AnchorSnapshot,
    groups: &[TrajectoryGroup],
    cfg: &GrpoConfig,
) -> Result<LossBreakdown, GrpoError> {
    params.zero_grad();
    loss_impl(params, anchor, groups, cfg, true)
}

/// One Adam step on the loss of `groups`.
pub fn grpo_update(
    params: &mut RouterParams,
    anchor: &AnchorSnapshot,
    groups: &[TrajectoryGroup],
    cfg: &GrpoConfig,
) -> Result<LossBreakdown, GrpoError> {
    let breakdown = grpo_loss_and_grad(params, anchor, groups, cfg)?;
    params.adam_step(&AdamConfig::with_learning_rate(cfg.effective_learning_rate()));
    Ok(breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::router::RouterConfig;

    fn params() -> RouterParams {
        RouterParams::new(
            RouterConfig {
                embed_dim: 4,
                num_heads: 2,
                ffn_dim: 8,
                max_len: 4,
                ..RouterConfig::default()
            },
            5,
        )
        .unwrap()
    }

    fn seq(x: f64) -> StepSequence {
        StepSequence::from_steps(&[vec![x, -x, 0.5, 0.1], vec![0.2, x, -0.3, 0.7]]).unwrap()
    }

    #[test]
    fn anchor_gives_zero_penalty() {
        let p = params();
        let anchor = AnchorSnapshot::new(&p);
        assert_eq!(routing_kl_penalty(&p, &anchor, &[seq(0.1), seq(-0.4)]).unwrap(), 0.0);
    }

    #[test]
    fn penalty_closed_form() {
        assert!((kl_and_grad(&[0.5, 0.5], &[0.9, 0.1]).0 - 0.5108256).abs() < 1e-6);
    }

    #[test]
    fn zero_advantages_leave_params_fixed() {
        let mut p = params();
        let anchor = AnchorSnapshot::new(&p);
        let before = p.flat_values();
        let decisions = vec![
            vec![Decision { sequence: seq(0.3), chosen: 1 }],
            vec![Decision { sequence: seq(0.3), chosen: 0 }],
        ];
        let group = TrajectoryGroup::from_decisions(decisions, vec![0.0, 0.0]);
        grpo_update(&mut p, &anchor, &[group], &GrpoConfig::default()).unwrap();
        assert_eq!(p.flat_values(), before);
    }

    #[test]
    fn positive_advantage_decision_gains_probability() {
        let mut p = params();
        let anchor = AnchorSnapshot::new(&p);
        let s = seq(0.3);
        let before = p.probabilities(&s).unwrap()[1];
        let decisions = vec![
            vec![Decision { sequence: s.clone(), chosen: 1 }],
            vec![Decision { sequence: s.clone(), chosen: 0 }],
        ];
        let group = TrajectoryGroup::from_decisions(decisions, vec![1.0, -1.0]);
        let cfg = GrpoConfig {
            learning_rate: 1e-3,
            ..GrpoConfig::default()
        };
        grpo_update(&mut p, &anchor, &[group], &cfg).unwrap();
        assert!(p.probabilities(&s).unwrap()[1] > before);
    }

    #[test]
    fn policy_term_matches_scalar_oracle() {
        let p = params();
        let anchor = AnchorSnapshot::new(&p);
        let d = |x: f64, c: usize| Decision { sequence: seq(x), chosen: c };
        let decisions = vec![vec![d(0.1, 1), d(0.2, 0)], vec![d(-0.5, 0), d(0.9, 1)]];
        let adv = vec![0.7, -1.3];
        let cfg = GrpoConfig {
            beta: 0.0,
            ..GrpoConfig::default()
        };
        let group = TrajectoryGroup::from_decisions(decisions.clone(), adv.clone());
        let loss = grpo_loss(&p, &anchor, &[group], &cfg).unwrap();
        let mut oracle = 0.0;
        for (a, ds) in adv.iter().zip(&decisions) {
            let logp: f64 = ds
                .iter()
                .map(|d| p.probabilities(&d.sequence).unwrap()[d.chosen].ln())
                .sum();
            oracle += a * logp;
        }
        oracle = -oracle / 2.0;
        assert!((loss.policy - oracle).abs() < 1e-9);
        assert_eq!(loss.total, loss.policy);
    }
}
