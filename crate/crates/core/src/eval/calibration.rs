use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Driver, Simulator};

use super::{run_episodes, success_rate, EvalError};

/// Minimum share of `D_t` below `1.5·δ_lo`.
pub const LOW_MASS_MIN: f64 = 0.80;
/// Minimum share of `D_t` above `0.8·δ_hi`.
pub const HIGH_MASS_MIN: f64 = 0.10;
pub const HIGH_SUCCESS_MIN: f64 = 0.95;
/// Required lead of the high policy's success rate over the low policy's.
pub const SUCCESS_GAP_MIN: f64 = 0.15;

/// Bins on a log10 scale from `10^LOG_MIN` to `10^LOG_MAX`, plus one underflow
/// bin `[0, 10^LOG_MIN)` and one overflow bin.
const LOG_MIN: f64 = -4.0;
const LOG_MAX: f64 = 1.0;
const BINS_PER_DECADE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub episodes: usize,
    pub steps: usize,
    pub low_threshold: f64,
    pub high_threshold: f64,
    pub low_mass: f64,
    pub high_mass: f64,
    /// The low and high regions do not overlap.
    pub separated: bool,
    pub high_success: f64,
    pub low_success: f64,
}

impl Calibration {
    /// Every failed calibration condition, empty when the world is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.separated {
            out.push(format!(
                "modes overlap: 1.5*delta_lo = {:.4} is not below 0.8*delta_hi = {:.4}",
                self.low_threshold, self.high_threshold
            ));
        }
        if self.low_mass < LOW_MASS_MIN {
            out.push(format!("only {:.3} of D_t lies below {:.4}", self.low_mass, self.low_threshold));
        }
        if self.high_mass < HIGH_MASS_MIN {
            out.push(format!("only {:.3} of D_t lies above {:.4}", self.high_mass, self.high_threshold));
        }
        if self.high_success < HIGH_SUCCESS_MIN {
            out.push(format!("fixed_high success {:.3} < {HIGH_SUCCESS_MIN}", self.high_success));
        }
        if self.high_success - self.low_success < SUCCESS_GAP_MIN {
            out.push(format!(
                "success gap {:.3} < {SUCCESS_GAP_MIN} (high {:.3}, low {:.3})",
                self.high_success - self.low_success,
                self.high_success,
                self.low_success
            ));
        }
        out
    }
}

/// Probes fixed_high, fixed_low and klst_collect on `episodes`; returns the
/// summary and every recorded divergence in step order.
pub fn calibrate(sim: &Simulator, episodes: &[u64]) -> Result<(Calibration, Vec<f64>), EvalError> {
    if episodes.is_empty() {
        return Err(EvalError::InvalidConfig("calibration needs at least one episode".into()));
    }
    let cfg = sim.config();
    let high = success_rate(&run_episodes(sim, &Driver::FixedHigh, episodes)?);
    let low = success_rate(&run_episodes(sim, &Driver::FixedLow, episodes)?);
    let collected = run_episodes(sim, &Driver::KlstCollect, episodes)?;
    let divergences: Vec<f64> = collected
        .iter()
        .flat_map(|t| &t.steps)
        .filter_map(|s| s.divergence)
        .collect();
    let n = divergences.len().max(1) as f64;
    let low_threshold = 1.5 * cfg.divergence_low;
    let high_threshold = 0.8 * cfg.divergence_high;
    let calibration = Calibration {
        episodes: episodes.len(),
        steps: divergences.len(),
        low_threshold,
        high_threshold,
        low_mass: divergences.iter().filter(|&&d| d < low_threshold).count() as f64 / n,
        high_mass: divergences.iter().filter(|&&d| d > high_threshold).count() as f64 / n,
        separated: low_threshold < high_threshold,
        high_success: high,
        low_success: low,
    };
    Ok((calibration, divergences))
}

pub fn divergence_histogram(values: &[f64]) -> Vec<HistogramBin> {
    let n_log = ((LOG_MAX - LOG_MIN) as usize) * BINS_PER_DECADE;
    let edge = |i: usize| 10f64.powf(LOG_MIN + i as f64 / BINS_PER_DECADE as f64);
    let mut bins = Vec::with_capacity(n_log + 2);
    bins.push(HistogramBin {
        lower: 0.0,
        upper: edge(0),
        count: 0,
    });
    for i in 0..n_log {
        bins.push(HistogramBin {
            lower: edge(i),
            upper: edge(i + 1),
            count: 0,
        });
    }
    bins.push(HistogramBin {
        lower: edge(n_log),
        upper: f64::INFINITY,
        count: 0,
    });
    for &v in values {
        let idx = bins.partition_point(|b| b.upper <= v).min(bins.len() - 1);
        bins[idx].count += 1;
    }
    bins
}

pub fn write_histogram_csv(path: impl AsRef<Path>, bins: &[HistogramBin]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for b in bins {
        w.serialize(b)?;
    }
    w.flush()?;
    Ok(())
}
