use std::sync::Arc;

use crate::klst::kl_divergence;

use super::{EnvConfig, EnvError, EnvState, HIGH_CORRECT_MASS};

/// Per-call inference cost of the low and high precision policies.
pub const DEFAULT_COSTS: [f64; 2] = [0.25, 1.0];

const BISECTION_ITERS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Low,
    High,
}

impl Precision {
    pub fn index(self) -> usize {
        match self {
            Precision::Low => crate::router::LOW_PRECISION,
            Precision::High => crate::router::HIGH_PRECISION,
        }
    }
}

/// A state-conditioned categorical over the action space.
pub trait ActionPolicy: Send + Sync {
    fn distribution(&self, state: &EnvState) -> Result<Vec<f64>, EnvError>;
}

/// The built-in policies of [`super::CriticalStepWorld`].
#[derive(Debug, Clone)]
pub struct SyntheticPolicy {
    config: EnvConfig,
    precision: Precision,
}

impl SyntheticPolicy {
    pub fn new(config: EnvConfig, precision: Precision) -> Self {
        Self { config, precision }
    }
}

fn high_distribution(config: &EnvConfig, state: &EnvState) -> Vec<f64> {
    let n = config.action_count;
    if state.is_poisoned() {
        return vec![1.0 / n as f64; n];
    }
    let m = state.milestone().expect("non-terminal state has a milestone");
    let total: f64 = m.preference.iter().sum();
    let bad = (n - m.good_actions.len()) as f64;
    let mut probs = vec![(1.0 - HIGH_CORRECT_MASS) / bad; n];
    for (&a, &w) in m.good_actions.iter().zip(&m.preference) {
        probs[a] = HIGH_CORRECT_MASS * w / total;
    }
    probs
}

fn mix(base: &[f64], target: &[f64], alpha: f64) -> Vec<f64> {
    base.iter()
        .zip(target)
        .map(|(b, t)| (1.0 - alpha) * b + alpha * t)
        .collect()
}

/// Smallest bracket `[lo, hi]` on the mixing weight around `KL(mix(α) ‖ base) = goal`.
/// The divergence is increasing in α on `[0, 1]`.
fn bisect(base: &[f64], target: &[f64], goal: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let d = kl_divergence(&mix(base, target, mid), base).expect("base has full support");
        if d < goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// The low policy tracks the high one closely at ordinary milestones and shifts
/// mass onto the poisoning actions at critical ones.
fn low_distribution(config: &EnvConfig, state: &EnvState) -> Vec<f64> {
    let high = high_distribution(config, state);
    if state.is_poisoned() {
        return high;
    }
    let m = state.milestone().expect("non-terminal state has a milestone");
    let n = config.action_count;
    if m.critical {
        let bad: Vec<usize> = (0..n).filter(|a| !m.good_actions.contains(a)).collect();
        let mut toward = vec![0.0; n];
        for &a in &bad {
            toward[a] = 1.0 / bad.len() as f64;
        }
        let cap = 0.5 * (config.divergence_high + config.max_critical_divergence());
        let goal = (config.divergence_high * (1.1 + 0.5 * m.divergence_jitter)).min(cap);
        // Upper end keeps the divergence at or above the goal.
        let (_, alpha) = bisect(&high, &toward, goal);
        mix(&high, &toward, alpha)
    } else {
        let goal = config.divergence_low * (0.2 + 0.7 * m.divergence_jitter);
        if goal <= 0.0 {
            return high;
        }
        let mut toward = vec![0.0; n];
        toward[m.low_favorite] = 1.0;
        // Lower end keeps the divergence at or below the goal.
        let (alpha, _) = bisect(&high, &toward, goal);
        mix(&high, &toward, alpha)
    }
}

impl ActionPolicy for SyntheticPolicy {
    fn distribution(&self, state: &EnvState) -> Result<Vec<f64>, EnvError> {
        if state.is_terminal() {
            return Err(EnvError::TerminalState);
        }
        Ok(match self.precision {
            Precision::High => high_distribution(&self.config, state),
            Precision::Low => low_distribution(&self.config, state),
        })
    }
}

/// A low/high policy pair with per-call costs indexed by precision.
#[derive(Clone)]
pub struct PolicyPair {
    pub low: Arc<dyn ActionPolicy>,
    pub high: Arc<dyn ActionPolicy>,
    pub costs: [f64; 2],
}

impl std::fmt::Debug for PolicyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PolicyPair").field("costs", &self.costs).finish_non_exhaustive()
    }
}

impl PolicyPair {
    pub fn new(low: Arc<dyn ActionPolicy>, high: Arc<dyn ActionPolicy>) -> Self {
        Self {
            low,
            high,
            costs: DEFAULT_COSTS,
        }
    }

    pub fn synthetic(config: &EnvConfig) -> Self {
        Self::new(
            Arc::new(SyntheticPolicy::new(config.clone(), Precision::Low)),
            Arc::new(SyntheticPolicy::new(config.clone(), Precision::High)),
        )
    }

    pub fn get(&self, which: Precision) -> &dyn ActionPolicy {
        match which {
            Precision::Low => self.low.as_ref(),
            Precision::High => self.high.as_ref(),
        }
    }
}

pub fn policy_distribution(
    pair: &PolicyPair,
    which: Precision,
    state: &EnvState,
) -> Result<Vec<f64>, EnvError> {
    pair.get(which).distribution(state)
}
