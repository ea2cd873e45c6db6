//! Trajectory persistence as JSON lines, one trajectory per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvError, Trajectory, TrajectoryStep};

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub action: usize,
    pub observation_tokens: Vec<String>,
    pub r: usize,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<f64>,
    #[serde(default)]
    pub critical: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub version: u32,
    pub episode_seed: u64,
    #[serde(default)]
    pub member: u64,
    #[serde(default)]
    pub task_id: usize,
    pub steps: Vec<StepRecord>,
    pub success: bool,
    #[serde(rename = "S")]
    pub high_calls: usize,
    #[serde(rename = "T")]
    pub total_steps: usize,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        Self {
            version: TRAJECTORY_FORMAT_VERSION,
            episode_seed: t.episode_seed,
            member: t.member,
            task_id: t.task_id,
            steps: t
                .steps
                .iter()
                .map(|s| StepRecord {
                    t: s.t,
                    action: s.action,
                    observation_tokens: s.observation.clone(),
                    r: s.precision,
                    divergence: s.divergence,
                    critical: s.critical,
                    embedding: s.embedding.clone(),
                })
                .collect(),
            success: t.success,
            high_calls: t.high_calls,
            total_steps: t.total_steps,
        }
    }
}

impl From<TrajectoryRecord> for Trajectory {
    fn from(r: TrajectoryRecord) -> Self {
        Self {
            episode_seed: r.episode_seed,
            member: r.member,
            task_id: r.task_id,
            steps: r
                .steps
                .into_iter()
                .map(|s| TrajectoryStep {
                    t: s.t,
                    embedding: s.embedding,
                    precision: s.r,
                    action: s.action,
                    observation: s.observation_tokens,
                    divergence: s.divergence,
                    critical: s.critical,
                    route_probs: None,
                })
                .collect(),
            success: r.success,
            high_calls: r.high_calls,
            total_steps: r.total_steps,
        }
    }
}

pub fn write_trajectories(path: impl AsRef<Path>, trajectories: &[Trajectory]) -> Result<(), EnvError> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in trajectories {
        let line = serde_json::to_string(&TrajectoryRecord::from(t)).expect("record serializes");
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(path: impl AsRef<Path>) -> Result<Vec<Trajectory>, EnvError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| EnvError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.version != TRAJECTORY_FORMAT_VERSION {
            return Err(EnvError::Format {
                line: i + 1,
                message: format!("unsupported version {}", rec.version),
            });
        }
        out.push(rec.into());
    }
    Ok(out)
}
