//! Success rate, high-precision usage and gain per high-precision call.

mod calibration;
mod metrics;
mod report;

pub use calibration::{
    calibrate, divergence_histogram, write_histogram_csv, Calibration, HistogramBin, HIGH_MASS_MIN,
    HIGH_SUCCESS_MIN, LOW_MASS_MIN, SUCCESS_GAP_MIN,
};

pub use metrics::ghc;
pub use report::{
    evaluate, evaluate_driver, high_ratio, report_from_trajectories, router_driver, run_episodes,
    success_rate, sweep, sweep_drivers, weak_baseline, write_frontier_csv, write_report_csv,
    write_report_json, BaselineSpec, EpisodeRow, EvalReport, FrontierPoint, RatioAveraging, Sweep,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Router(#[from] crate::router::RouterError),
    #[error("report io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv export: {0}")]
    Csv(#[from] csv::Error),
    #[error("json export: {0}")]
    Json(#[from] serde_json::Error),
}
