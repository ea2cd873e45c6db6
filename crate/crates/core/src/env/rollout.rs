use std::sync::Arc;

use crate::klst::kl_divergence;
use crate::nn::Matrix;
use crate::router::{route, sample_index, RouteMode, RouterParams, StepSequence};

use super::rng::{stream_rng, Stream};
use super::{CriticalStepWorld, EnvConfig, EnvError, PolicyPair, Precision, StepEncoder};

/// Who picks the precision at each step.
#[derive(Debug, Clone)]
pub enum Driver {
    FixedLow,
    FixedHigh,
    /// High precision with independent probability `p` per step.
    Random(f64),
    Router {
        params: Arc<RouterParams>,
        mode: RouteMode,
    },
    /// Evaluates both policies, records their divergence, executes high.
    KlstCollect,
}

/// Identifies one rollout. Members of a GRPO group share `episode` (and so the
/// task instance) and differ in `member`, which keys the sampling streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EpisodeSeeds {
    pub episode: u64,
    pub member: u64,
}

impl EpisodeSeeds {
    pub fn episode(episode: u64) -> Self {
        Self { episode, member: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    /// 1-based decision index.
    pub t: usize,
    /// `z_t`, the router input row for this step. Absent when loaded from a
    /// file that did not store embeddings.
    pub embedding: Option<Vec<f64>>,
    /// Precision used: 0 low, 1 high.
    pub precision: usize,
    pub action: usize,
    /// Observation produced by `action`.
    pub observation: Vec<String>,
    /// `KL(low ‖ high)` at this state; only under [`Driver::KlstCollect`].
    pub divergence: Option<f64>,
    /// Ground truth from the world construction.
    pub critical: bool,
    /// Router distribution when a router drove the step.
    pub route_probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub episode_seed: u64,
    pub member: u64,
    pub task_id: usize,
    pub steps: Vec<TrajectoryStep>,
    pub success: bool,
    /// `S`: steps executed by the high policy.
    pub high_calls: usize,
    /// `T`: total steps.
    pub total_steps: usize,
}

impl Trajectory {
    pub fn high_ratio(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            self.high_calls as f64 / self.total_steps as f64
        }
    }

    /// The router input seen before deciding step `t` (1-based): `z_1..z_t`,
    /// keeping the latest `max_len`. `None` when embeddings were not stored.
    pub fn sequence_at(&self, t: usize, max_len: usize) -> Option<StepSequence> {
        let start = t.saturating_sub(max_len);
        let rows: Option<Vec<&[f64]>> = self.steps[start..t]
            .iter()
            .map(|s| s.embedding.as_deref())
            .collect();
        let rows = rows?;
        Some(StepSequence::from_steps(&rows).expect("stored embeddings share one dimension"))
    }
}

/// World, policy pair and step encoder bundled for rollouts.
#[derive(Debug, Clone)]
pub struct Simulator {
    world: CriticalStepWorld,
    pair: PolicyPair,
    encoder: StepEncoder,
}

impl Simulator {
    pub fn new(world: CriticalStepWorld, pair: PolicyPair) -> Self {
        let encoder = StepEncoder::new(world.config().embed_dim);
        Self {
            world,
            pair,
            encoder,
        }
    }

    /// The built-in synthetic pair on `config`.
    pub fn synthetic(config: &EnvConfig) -> Result<Self, EnvError> {
        let world = CriticalStepWorld::new(config.clone())?;
        Ok(Self::new(world, PolicyPair::synthetic(config)))
    }

    pub fn world(&self) -> &CriticalStepWorld {
        &self.world
    }

    pub fn pair(&self) -> &PolicyPair {
        &self.pair
    }

    pub fn encoder(&self) -> &StepEncoder {
        &self.encoder
    }

    pub fn config(&self) -> &EnvConfig {
        self.world.config()
    }

    /// Runs one episode to termination.
    ///
    /// Environment instance, action sampling and routing draws come from
    /// separate streams, so e.g. the extra policy evaluation of
    /// [`Driver::KlstCollect`] leaves the executed actions identical to
    /// [`Driver::FixedHigh`].
    pub fn rollout(&self, driver: &Driver, seeds: EpisodeSeeds) -> Result<Trajectory, EnvError> {
        let master = self.config().seed;
        let mut policy_rng = stream_rng(master, Stream::Policy, seeds.episode, seeds.member);
        let mut router_rng = stream_rng(master, Stream::Router, seeds.episode, seeds.member);
        let mut state = self.world.reset(seeds.episode);
        let task = state.description().to_vec();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut steps = Vec::new();
        let mut high_calls = 0;

        while !state.is_terminal() {
            let z = self
                .encoder
                .embed(&task, state.last_action(), state.observation());
            rows.push(z.clone());
            let mut route_probs = None;
            let mut divergence = None;
            let precision = match driver {
                Driver::FixedLow => Precision::Low,
                Driver::FixedHigh => Precision::High,
                Driver::Random(p) => {
                    let u: f64 = rand::Rng::random(&mut router_rng);
                    if u < *p {
                        Precision::High
                    } else {
                        Precision::Low
                    }
                }
                Driver::Router { params, mode } => {
                    let max_len = params.config().max_len;
                    let start = rows.len().saturating_sub(max_len);
                    let seq = StepSequence::new(
                        Matrix::from_rows(&rows[start..]).map_err(crate::router::RouterError::from)?,
                        vec![true; rows.len() - start],
                    )?;
                    let decision = route(&seq, params, *mode, &mut router_rng)?;
                    let chosen = decision.chosen;
                    route_probs = Some(decision.probs);
                    if chosen == Precision::High.index() {
                        Precision::High
                    } else {
                        Precision::Low
                    }
                }
                Driver::KlstCollect => Precision::High,
            };
            let probs = if matches!(driver, Driver::KlstCollect) {
                let low = self.pair.low.distribution(&state)?;
                let high = self.pair.high.distribution(&state)?;
                divergence = Some(kl_divergence(&low, &high)?);
                high
            } else {
                self.pair.get(precision).distribution(&state)?
            };
            let action = sample_index(&probs, &mut policy_rng);
            let t = state.t();
            let critical = state.is_critical();
            let outcome = self.world.step(&mut state, action)?;
            if precision == Precision::High {
                high_calls += 1;
            }
            steps.push(TrajectoryStep {
                t,
                embedding: Some(z),
                precision: precision.index(),
                action,
                observation: outcome.observation,
                divergence,
                critical,
                route_probs,
            });
        }

        Ok(Trajectory {
            episode_seed: seeds.episode,
            member: seeds.member,
            task_id: state.task_id(),
            total_steps: steps.len(),
            steps,
            success: state.is_success(),
            high_calls,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::router::RouterConfig;

    fn sim() -> Simulator {
        Simulator::synthetic(&EnvConfig::default()).unwrap()
    }

    fn success_rate(sim: &Simulator, driver: &Driver, n: u64) -> f64 {
        let wins = (0..n)
            .filter(|&e| sim.rollout(driver, EpisodeSeeds::episode(e)).unwrap().success)
            .count();
        wins as f64 / n as f64
    }

    #[test]
    fn fixed_policies_separate() {
        let sim = sim();
        let high = success_rate(&sim, &Driver::FixedHigh, 200);
        let low = success_rate(&sim, &Driver::FixedLow, 200);
        assert!(high >= 0.95, "{high}");
        assert!(high - low >= 0.15, "{high} vs {low}");
    }

    #[test]
    fn random_endpoints_match_fixed() {
        let sim = sim();
        for e in 0..30 {
            let s = EpisodeSeeds::episode(e);
            assert_eq!(
                sim.rollout(&Driver::Random(0.0), s).unwrap(),
                sim.rollout(&Driver::FixedLow, s).unwrap()
            );
            assert_eq!(
                sim.rollout(&Driver::Random(1.0), s).unwrap(),
                sim.rollout(&Driver::FixedHigh, s).unwrap()
            );
        }
    }

    #[test]
    fn klst_collect_matches_fixed_high() {
        let sim = sim();
        for e in 0..50 {
            let s = EpisodeSeeds::episode(e);
            let a = sim.rollout(&Driver::KlstCollect, s).unwrap();
            let b = sim.rollout(&Driver::FixedHigh, s).unwrap();
            assert!(a.steps.iter().all(|s| s.divergence.is_some()));
            let actions = |t: &Trajectory| t.steps.iter().map(|s| s.action).collect::<Vec<_>>();
            assert_eq!(actions(&a), actions(&b));
            assert_eq!(a.success, b.success);
        }
    }

    #[test]
    fn random_cost_accounting() {
        let sim = sim();
        let (mut s, mut t) = (0, 0);
        for e in 0..400 {
            let traj = sim.rollout(&Driver::Random(0.3), EpisodeSeeds::episode(e)).unwrap();
            let high = traj.steps.iter().filter(|s| s.precision == 1).count();
            assert_eq!(high, traj.high_calls);
            assert!(traj.high_calls <= traj.total_steps);
            s += traj.high_calls;
            t += traj.total_steps;
        }
        let ratio = s as f64 / t as f64;
        assert!((ratio - 0.3).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn router_rollout_is_deterministic() {
        let sim = sim();
        let params = Arc::new(RouterParams::new(RouterConfig::default(), 4).unwrap());
        let driver = Driver::Router {
            params,
            mode: RouteMode::Sampled,
        };
        let s = EpisodeSeeds { episode: 3, member: 2 };
        let a = sim.rollout(&driver, s).unwrap();
        assert_eq!(a, sim.rollout(&driver, s).unwrap());
        assert!(a.steps.iter().all(|s| s.route_probs.is_some()));
        let seq = a.sequence_at(a.total_steps, 64).unwrap();
        assert_eq!(seq.valid_len(), a.total_steps);
    }
}
