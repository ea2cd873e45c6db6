use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use super::rng::{stream_rng, Stream};
use super::{CriticalSteps, EnvConfig, EnvError};

const VERBS: [&str; 6] = ["put", "clean", "heat", "cool", "find", "move"];
const ITEMS: [&str; 8] = ["mug", "apple", "book", "towel", "knife", "plate", "cloth", "lamp"];
const RECEPTACLES: [&str; 4] = ["cabinet", "fridge", "sink", "desk"];
const LOCATIONS: [&str; 12] = [
    "kitchen", "hallway", "pantry", "garage", "bedroom", "office", "cellar", "garden", "attic",
    "porch", "study", "laundry",
];
const FIXTURES: [&str; 12] = [
    "shelf", "drawer", "table", "counter", "cupboard", "box", "crate", "bench", "rack", "basket",
    "bin", "stool",
];
/// Cue words that only appear when arriving at a critical milestone.
const HAZARDS: [&str; 6] = ["locked", "fragile", "tangled", "narrow", "unstable", "sealed"];
/// Shared by every critical arrival, after the hazard word.
const CRITICAL_CUE: &str = "careful";

pub const TASK_COUNT: usize = VERBS.len() * ITEMS.len() * RECEPTACLES.len();

/// Per-milestone structure fixed at reset.
#[derive(Debug, Clone, PartialEq)]
pub struct Milestone {
    pub critical: bool,
    /// Actions that advance from this milestone.
    pub good_actions: Vec<usize>,
    /// Relative preference of the high policy over `good_actions`.
    pub preference: Vec<f64>,
    /// The advancing action the low policy drifts toward at ordinary milestones.
    pub low_favorite: usize,
    /// In `[0, 1)`; spreads the divergence targets within their bands.
    pub divergence_jitter: f64,
    /// Observation emitted on arriving here.
    pub arrival: Vec<String>,
}

/// A task instance: everything about an episode that is fixed at reset.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeInstance {
    pub episode_seed: u64,
    pub task_id: usize,
    pub description: Vec<String>,
    pub milestones: Vec<Milestone>,
}

impl EpisodeInstance {
    pub fn critical_positions(&self) -> Vec<usize> {
        self.milestones
            .iter()
            .enumerate()
            .filter(|(_, m)| m.critical)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub action: usize,
    pub observation: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    instance: Arc<EpisodeInstance>,
    /// 1-based index of the next step to take.
    t: usize,
    /// 1-based milestone the agent stands at.
    position: usize,
    poisoned: bool,
    initial_observation: Vec<String>,
    history: Vec<HistoryEntry>,
    terminal: bool,
    success: bool,
}

impl EnvState {
    pub fn instance(&self) -> &EpisodeInstance {
        &self.instance
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn task_id(&self) -> usize {
        self.instance.task_id
    }

    pub fn description(&self) -> &[String] {
        &self.instance.description
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn initial_observation(&self) -> &[String] {
        &self.initial_observation
    }

    /// Most recent observation (the initial one before any step).
    pub fn observation(&self) -> &[String] {
        self.history
            .last()
            .map_or(&self.initial_observation, |h| &h.observation)
    }

    pub fn last_action(&self) -> Option<usize> {
        self.history.last().map(|h| h.action)
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn is_success(&self) -> bool {
        self.success
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    /// The current decision is one of the construction-time critical milestones.
    pub fn is_critical(&self) -> bool {
        !self.poisoned && !self.terminal && self.milestone().is_some_and(|m| m.critical)
    }

    pub fn milestone(&self) -> Option<&Milestone> {
        self.instance.milestones.get(self.position.checked_sub(1)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<String>,
    pub done: bool,
    pub success: bool,
}

/// Synthetic episodic world with construction-time-known critical steps.
///
/// The agent walks through `goal_length` milestones. At an ordinary milestone
/// a majority of actions advance and the rest stall in place. At a critical
/// milestone only `n_correct_paths` actions advance; any other action poisons
/// the episode, after which nothing advances and the episode fails at the
/// horizon.
#[derive(Debug, Clone)]
pub struct CriticalStepWorld {
    config: EnvConfig,
}

fn tokens(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| (*w).to_string()).collect()
}

impl CriticalStepWorld {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    fn build_instance(&self, episode_seed: u64) -> EpisodeInstance {
        let cfg = &self.config;
        let mut rng = stream_rng(cfg.seed, Stream::Environment, episode_seed, 0);
        let task_id = rng.random_range(0..TASK_COUNT);
        let verb = VERBS[task_id % VERBS.len()];
        let item = ITEMS[(task_id / VERBS.len()) % ITEMS.len()];
        let receptacle = RECEPTACLES[task_id / (VERBS.len() * ITEMS.len())];
        let description = tokens(&[verb, item, "to", receptacle]);

        let mut critical = vec![false; cfg.goal_length];
        match &cfg.critical_steps {
            CriticalSteps::Seeded(n) => {
                let mut positions: Vec<usize> = (0..cfg.goal_length).collect();
                positions.shuffle(&mut rng);
                for &p in positions.iter().take(*n) {
                    critical[p] = true;
                }
            }
            CriticalSteps::Fixed(positions) => {
                for &p in positions {
                    critical[p - 1] = true;
                }
            }
        }

        let mut actions: Vec<usize> = (0..cfg.action_count).collect();
        let milestones = critical
            .into_iter()
            .map(|is_critical| {
                actions.shuffle(&mut rng);
                let n_good = if is_critical {
                    cfg.n_correct_paths
                } else {
                    cfg.advancing_count()
                };
                let mut good_actions = actions[..n_good].to_vec();
                good_actions.sort_unstable();
                let preference = (0..n_good).map(|_| rng.random_range(1.0..2.0)).collect();
                let low_favorite = good_actions[rng.random_range(0..n_good)];
                let divergence_jitter = rng.random::<f64>();
                let location = LOCATIONS[rng.random_range(0..LOCATIONS.len())];
                let fixture = FIXTURES[rng.random_range(0..FIXTURES.len())];
                let mut arrival = tokens(&[location, fixture]);
                if is_critical {
                    arrival.push(HAZARDS[rng.random_range(0..HAZARDS.len())].to_string());
                    arrival.push(CRITICAL_CUE.to_string());
                }
                Milestone {
                    critical: is_critical,
                    good_actions,
                    preference,
                    low_favorite,
                    divergence_jitter,
                    arrival,
                }
            })
            .collect();

        EpisodeInstance {
            episode_seed,
            task_id,
            description,
            milestones,
        }
    }

    /// Starts an episode; a pure function of the config and `episode_seed`.
    pub fn reset(&self, episode_seed: u64) -> EnvState {
        let instance = Arc::new(self.build_instance(episode_seed));
        let initial_observation = instance.milestones[0].arrival.clone();
        EnvState {
            instance,
            t: 1,
            position: 1,
            poisoned: false,
            initial_observation,
            history: Vec::new(),
            terminal: false,
            success: false,
        }
    }

    pub fn step(&self, state: &mut EnvState, action: usize) -> Result<StepOutcome, EnvError> {
        if state.terminal {
            return Err(EnvError::TerminalState);
        }
        if !self.config.action_space().contains(action) {
            return Err(EnvError::InvalidAction {
                action,
                size: self.config.action_count,
            });
        }
        let milestone = state.milestone().cloned().expect("non-terminal state has a milestone");
        let advances = !state.poisoned && milestone.good_actions.contains(&action);
        let observation = if state.poisoned {
            tokens(&["nothing", "happens"])
        } else if advances {
            if state.position == self.config.goal_length {
                state.success = true;
                state.terminal = true;
                tokens(&["task", "complete"])
            } else {
                state.position += 1;
                state.milestone().expect("position within goal").arrival.clone()
            }
        } else if milestone.critical {
            state.poisoned = true;
            tokens(&["nothing", "happens"])
        } else {
            let mut obs = tokens(&["nothing", "happens"]);
            obs.push(milestone.arrival[0].clone());
            obs
        };
        if !state.terminal && state.t >= self.config.horizon {
            state.terminal = true;
        }
        state.history.push(HistoryEntry {
            action,
            observation: observation.clone(),
        });
        state.t += 1;
        Ok(StepOutcome {
            observation,
            done: state.terminal,
            success: state.success,
        })
    }

    /// The designated best action at the current milestone, used by oracle tests.
    pub fn correct_action(&self, state: &EnvState) -> Option<usize> {
        let m = state.milestone()?;
        let best = m
            .preference
            .iter()
            .enumerate()
            .fold(0, |b, (i, &p)| if p > m.preference[b] { i } else { b });
        Some(m.good_actions[best])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> CriticalStepWorld {
        CriticalStepWorld::new(EnvConfig::default()).unwrap()
    }

    #[test]
    fn reset_is_deterministic() {
        let w = world();
        assert_eq!(w.reset(17), w.reset(17));
        assert_eq!(w.reset(17).instance().critical_positions().len(), 2);
    }

    #[test]
    fn different_seeds_mostly_differ_in_task() {
        let w = world();
        let pairs = 2000;
        let differ = (0..pairs)
            .filter(|&i| w.reset(2 * i).task_id() != w.reset(2 * i + 1).task_id())
            .count();
        let rate = differ as f64 / pairs as f64;
        // Expected 1 - 1/TASK_COUNT; allow for sampling noise.
        assert!(rate >= 1.0 - 1.0 / TASK_COUNT as f64 - 0.01, "{rate}");
    }

    #[test]
    fn correct_actions_reach_goal() {
        let w = world();
        for seed in 0..50 {
            let mut s = w.reset(seed);
            let mut last = None;
            while !s.is_terminal() {
                let a = w.correct_action(&s).unwrap();
                last = Some(w.step(&mut s, a).unwrap());
            }
            let last = last.unwrap();
            assert!(last.success && last.done);
            assert_eq!(s.history().len(), w.config().goal_length);
        }
    }

    #[test]
    fn wrong_critical_action_fails_at_horizon() {
        let w = world();
        for seed in 0..50 {
            let mut s = w.reset(seed);
            let target = s.instance().critical_positions()[0];
            let mut out = None;
            while !s.is_terminal() {
                let a = if s.position() == target && !s.is_poisoned() {
                    let good = &s.milestone().unwrap().good_actions;
                    (0..w.config().action_count).find(|a| !good.contains(a)).unwrap()
                } else {
                    w.correct_action(&s).unwrap()
                };
                out = Some(w.step(&mut s, a).unwrap());
            }
            let out = out.unwrap();
            assert!(!out.success);
            assert_eq!(s.t() - 1, w.config().horizon);
        }
    }

    #[test]
    fn horizon_without_goal_fails() {
        let cfg = EnvConfig {
            horizon: 3,
            goal_length: 3,
            critical_steps: CriticalSteps::Fixed(vec![]),
            ..EnvConfig::default()
        };
        let w = CriticalStepWorld::new(cfg).unwrap();
        let mut s = w.reset(0);
        let stall = (0..6)
            .find(|a| !s.milestone().unwrap().good_actions.contains(a))
            .unwrap();
        let mut out = w.step(&mut s, stall).unwrap();
        while !out.done {
            let a = w.correct_action(&s).unwrap();
            out = w.step(&mut s, a).unwrap();
        }
        assert!(!out.success);
        assert!(matches!(w.step(&mut s, 0), Err(EnvError::TerminalState)));
    }

    #[test]
    fn invalid_action_rejected() {
        let w = world();
        let mut s = w.reset(0);
        assert!(matches!(
            w.step(&mut s, 6),
            Err(EnvError::InvalidAction { .. })
        ));
    }

    #[test]
    fn critical_arrivals_carry_a_hazard_cue() {
        let w = world();
        let s = w.reset(3);
        for m in &s.instance().milestones {
            let cued = m.arrival.iter().any(|t| HAZARDS.contains(&t.as_str()));
            assert_eq!(cued, m.critical);
        }
    }
}
