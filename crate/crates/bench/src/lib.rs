//! Shared fixtures for the benchmarks.

use mixroute::env::{Driver, EnvConfig, EpisodeSeeds, Simulator, Trajectory};
use mixroute::router::{RouterConfig, RouterParams, StepSequence};

pub fn simulator() -> Simulator {
    Simulator::synthetic(&EnvConfig::default()).expect("default world is valid")
}

pub fn router() -> RouterParams {
    RouterParams::new(RouterConfig::default(), 0).expect("default router is valid")
}

/// A full-horizon sequence from one high-precision rollout.
pub fn sequence(sim: &Simulator) -> StepSequence {
    let t = rollout(sim, &Driver::FixedHigh, 0);
    t.sequence_at(t.steps.len(), RouterConfig::default().max_len)
        .expect("rollouts keep embeddings")
}

pub fn rollout(sim: &Simulator, driver: &Driver, episode: u64) -> Trajectory {
    sim.rollout(driver, EpisodeSeeds::episode(episode)).expect("rollout succeeds")
}
