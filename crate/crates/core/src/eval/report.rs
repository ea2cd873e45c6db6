use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Driver, EpisodeSeeds, Simulator, Trajectory};
use crate::router::{load_params, RouteMode, RouterConfig, RouterParams};

use super::{ghc, EvalError};

/// A routing method to evaluate, as written in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineSpec {
    FixedLow,
    FixedHigh,
    Random { p: f64 },
    Router { checkpoint: PathBuf, mode: RouteMode },
}

impl BaselineSpec {
    pub fn tag(&self) -> String {
        match self {
            BaselineSpec::FixedLow => "fixed_low".into(),
            BaselineSpec::FixedHigh => "fixed_high".into(),
            BaselineSpec::Random { p } => format!("random@{p}"),
            BaselineSpec::Router { mode, .. } => match mode {
                RouteMode::Greedy => "router".into(),
                RouteMode::Sampled => "router_sampled".into(),
            },
        }
    }

    pub fn needs_checkpoint(&self) -> bool {
        matches!(self, BaselineSpec::Router { .. })
    }

    /// Builds the rollout driver, loading the checkpoint for router specs.
    pub fn driver(&self, router: &RouterConfig) -> Result<Driver, EvalError> {
        Ok(match self {
            BaselineSpec::FixedLow => Driver::FixedLow,
            BaselineSpec::FixedHigh => Driver::FixedHigh,
            BaselineSpec::Random { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(EvalError::Domain(format!("random baseline p = {p} outside [0, 1]")));
                }
                Driver::Random(*p)
            }
            BaselineSpec::Router { checkpoint, mode } => Driver::Router {
                params: Arc::new(load_params(checkpoint, router)?),
                mode: *mode,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioAveraging {
    /// Total high calls over total steps.
    #[default]
    Micro,
    /// Mean of per-episode ratios.
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: u64,
    pub success: bool,
    pub high_calls: usize,
    pub total_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub n_episodes: usize,
    pub success_rate: f64,
    pub high_ratio: f64,
    pub averaging: RatioAveraging,
    pub weak_success_rate: f64,
    /// `None` when `high_ratio` is 0.
    pub ghc: Option<f64>,
    pub episodes: Vec<EpisodeRow>,
}

/// `(c, S)` for one method, for plotting the trade-off frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub method: String,
    pub high_ratio: f64,
    pub success_rate: f64,
    pub weak_success_rate: f64,
    pub ghc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub reports: Vec<EvalReport>,
    pub frontier: Vec<FrontierPoint>,
}

/// Rolls `driver` out on every episode id, in order, on the current rayon pool.
pub fn run_episodes(sim: &Simulator, driver: &Driver, episodes: &[u64]) -> Result<Vec<Trajectory>, EvalError> {
    episodes
        .par_iter()
        .map(|&e| sim.rollout(driver, EpisodeSeeds::episode(e)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(EvalError::from)
}

pub fn success_rate(trajectories: &[Trajectory]) -> f64 {
    trajectories.iter().filter(|t| t.success).count() as f64 / trajectories.len() as f64
}

pub fn high_ratio(trajectories: &[Trajectory], averaging: RatioAveraging) -> f64 {
    match averaging {
        RatioAveraging::Micro => {
            let s: usize = trajectories.iter().map(|t| t.high_calls).sum();
            let t: usize = trajectories.iter().map(|t| t.total_steps).sum();
            if t == 0 {
                0.0
            } else {
                s as f64 / t as f64
            }
        }
        RatioAveraging::Macro => {
            trajectories.iter().map(Trajectory::high_ratio).sum::<f64>() / trajectories.len() as f64
        }
    }
}

/// Aggregates finished rollouts against a given weak-baseline success rate.
pub fn report_from_trajectories(
    method: impl Into<String>,
    trajectories: &[Trajectory],
    weak_success_rate: f64,
    averaging: RatioAveraging,
) -> Result<EvalReport, EvalError> {
    if trajectories.is_empty() {
        return Err(EvalError::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let s = success_rate(trajectories);
    let c = high_ratio(trajectories, averaging);
    Ok(EvalReport {
        method: method.into(),
        n_episodes: trajectories.len(),
        success_rate: s,
        high_ratio: c,
        averaging,
        weak_success_rate,
        ghc: ghc(s, weak_success_rate, c)?,
        episodes: trajectories
            .iter()
            .map(|t| EpisodeRow {
                episode: t.episode_seed,
                success: t.success,
                high_calls: t.high_calls,
                total_steps: t.total_steps,
            })
            .collect(),
    })
}

/// Success rate of the low policy alone over `episodes`.
pub fn weak_baseline(sim: &Simulator, episodes: &[u64]) -> Result<f64, EvalError> {
    if episodes.is_empty() {
        return Err(EvalError::InvalidConfig("evaluation needs at least one episode".into()));
    }
    Ok(success_rate(&run_episodes(sim, &Driver::FixedLow, episodes)?))
}

/// Evaluates a driver with a paired low-precision baseline on the same episodes.
pub fn evaluate_driver(
    sim: &Simulator,
    method: impl Into<String>,
    driver: &Driver,
    episodes: &[u64],
    averaging: RatioAveraging,
) -> Result<EvalReport, EvalError> {
    let weak = weak_baseline(sim, episodes)?;
    let trajs = run_episodes(sim, driver, episodes)?;
    report_from_trajectories(method, &trajs, weak, averaging)
}

pub fn evaluate(
    sim: &Simulator,
    spec: &BaselineSpec,
    router: &RouterConfig,
    episodes: &[u64],
    averaging: RatioAveraging,
) -> Result<EvalReport, EvalError> {
    let driver = spec.driver(router)?;
    evaluate_driver(sim, spec.tag(), &driver, episodes, averaging)
}

/// Named drivers evaluated on shared episodes against one weak baseline.
pub fn sweep_drivers(
    sim: &Simulator,
    methods: &[(String, Driver)],
    episodes: &[u64],
    averaging: RatioAveraging,
) -> Result<Sweep, EvalError> {
    if methods.is_empty() {
        return Err(EvalError::InvalidConfig("sweep needs at least one method".into()));
    }
    let weak = weak_baseline(sim, episodes)?;
    let reports = methods
        .iter()
        .map(|(name, driver)| {
            let trajs = run_episodes(sim, driver, episodes)?;
            report_from_trajectories(name.clone(), &trajs, weak, averaging)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let frontier = reports
        .iter()
        .map(|r| FrontierPoint {
            method: r.method.clone(),
            high_ratio: r.high_ratio,
            success_rate: r.success_rate,
            weak_success_rate: r.weak_success_rate,
            ghc: r.ghc,
        })
        .collect();
    Ok(Sweep { reports, frontier })
}

pub fn sweep(
    sim: &Simulator,
    specs: &[BaselineSpec],
    router: &RouterConfig,
    episodes: &[u64],
    averaging: RatioAveraging,
) -> Result<Sweep, EvalError> {
    let methods = specs
        .iter()
        .map(|s| Ok((s.tag(), s.driver(router)?)))
        .collect::<Result<Vec<_>, EvalError>>()?;
    sweep_drivers(sim, &methods, episodes, averaging)
}

/// Router driver from in-memory parameters.
pub fn router_driver(params: &RouterParams, mode: RouteMode) -> Driver {
    Driver::Router {
        params: Arc::new(params.snapshot()),
        mode,
    }
}

#[derive(Serialize)]
struct ReportRow<'a> {
    method: &'a str,
    n: usize,
    #[serde(rename = "S")]
    s: f64,
    c: f64,
    #[serde(rename = "S_weak")]
    s_weak: f64,
    #[serde(rename = "GHC")]
    ghc: Option<f64>,
}

pub fn write_report_csv(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(ReportRow {
            method: &r.method,
            n: r.n_episodes,
            s: r.success_rate,
            c: r.high_ratio,
            s_weak: r.weak_success_rate,
            ghc: r.ghc,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<(), EvalError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, reports)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_frontier_csv(path: impl AsRef<Path>, frontier: &[FrontierPoint]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in frontier {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
