use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Driver, EpisodeSeeds, Simulator, Trajectory};
use crate::router::StepSequence;

use super::{class_weights, label, EmpiricalCdf, KlstError, LabelingConfig};

/// Successful high-precision rollouts plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    pub trajectories: Vec<Trajectory>,
    pub attempted: usize,
    pub discarded: usize,
}

/// Runs `n_episodes` divergence-recording rollouts on episodes
/// `first_episode..first_episode + n_episodes` and keeps the successes.
///
/// Rollouts run on the current rayon pool; the result order is the episode order.
pub fn collect(sim: &Simulator, n_episodes: usize, first_episode: u64) -> Result<Collection, KlstError> {
    if n_episodes == 0 {
        return Err(KlstError::InvalidConfig("collection needs at least one episode".into()));
    }
    let all: Vec<Trajectory> = (0..n_episodes as u64)
        .into_par_iter()
        .map(|i| sim.rollout(&Driver::KlstCollect, EpisodeSeeds::episode(first_episode + i)))
        .collect::<Result<_, _>>()?;
    let trajectories: Vec<Trajectory> = all.into_iter().filter(|t| t.success).collect();
    let discarded = n_episodes - trajectories.len();
    log::info!(
        "collected {} successful episodes, discarded {discarded}",
        trajectories.len()
    );
    if trajectories.is_empty() {
        return Err(KlstError::NoSuccesses { attempted: n_episodes });
    }
    Ok(Collection {
        trajectories,
        attempted: n_episodes,
        discarded,
    })
}

/// One supervised example: the router input at step `t` and its divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct KlRecord {
    pub episode: u64,
    pub t: usize,
    pub sequence: StepSequence,
    pub divergence: f64,
    pub label: Option<bool>,
    /// Construction-time ground truth, kept for evaluation only.
    pub critical: bool,
}

/// Turns divergence-annotated trajectories into unlabeled records.
pub fn records_from_trajectories(
    trajectories: &[Trajectory],
    max_len: usize,
) -> Result<Vec<KlRecord>, KlstError> {
    let mut out = Vec::new();
    for traj in trajectories {
        for (i, step) in traj.steps.iter().enumerate() {
            let divergence = step.divergence.ok_or_else(|| {
                KlstError::InvalidData(format!(
                    "episode {} step {} has no divergence value",
                    traj.episode_seed, step.t
                ))
            })?;
            let sequence = traj.sequence_at(i + 1, max_len).ok_or_else(|| {
                KlstError::InvalidData(format!("episode {} lacks step embeddings", traj.episode_seed))
            })?;
            out.push(KlRecord {
                episode: traj.episode_seed,
                t: step.t,
                sequence,
                divergence,
                label: None,
                critical: step.critical,
            });
        }
    }
    Ok(out)
}

/// Labeled records with their class weights and the CDF used for labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionDataset {
    pub records: Vec<KlRecord>,
    pub class_weights: [f64; 2],
    pub cdf: EmpiricalCdf,
}

impl SupervisionDataset {
    /// Labels every record against the pooled CDF of all their divergences.
    pub fn build(records: Vec<KlRecord>, config: &LabelingConfig) -> Result<Self, KlstError> {
        let values: Vec<f64> = records.iter().map(|r| r.divergence).collect();
        let cdf = EmpiricalCdf::new(&values)?;
        Self::build_with_cdf(records, cdf, config)
    }

    /// Labels against an externally supplied CDF snapshot.
    pub fn build_with_cdf(
        mut records: Vec<KlRecord>,
        cdf: EmpiricalCdf,
        config: &LabelingConfig,
    ) -> Result<Self, KlstError> {
        config.validate()?;
        for r in &mut records {
            r.label = Some(label(r.divergence, &cdf, config));
        }
        let labels: Vec<bool> = records.iter().map(|r| r.label == Some(true)).collect();
        let class_weights = class_weights(&labels)?;
        Ok(Self {
            records,
            class_weights,
            cdf,
        })
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.label == Some(true)).collect()
    }

    pub fn positive_fraction(&self) -> f64 {
        let pos = self.labels().into_iter().filter(|&y| y).count();
        pos as f64 / self.records.len() as f64
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), KlstError> {
        write_records(path, &self.records)
    }

    /// Sorted divergence values, the exact CDF used for labeling.
    pub fn write_cdf_snapshot(&self, path: impl AsRef<Path>) -> Result<(), KlstError> {
        let text = serde_json::to_string(self.cdf.sorted_values()).expect("floats serialize");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Reloads a dataset written by [`Self::write_jsonl`] and its CDF snapshot.
    pub fn read(
        records_path: impl AsRef<Path>,
        cdf_path: impl AsRef<Path>,
        config: &LabelingConfig,
    ) -> Result<Self, KlstError> {
        let records = read_records(records_path)?;
        let sorted: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(cdf_path)?)
            .map_err(|e| KlstError::InvalidData(format!("cdf snapshot: {e}")))?;
        Self::build_with_cdf(records, EmpiricalCdf::from_sorted(sorted)?, config)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    episode: u64,
    t: usize,
    /// `z_t` only; the sequence is rebuilt from earlier lines of the episode.
    embedding: Vec<f64>,
    mask_len: usize,
    #[serde(rename = "D")]
    divergence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<u8>,
    #[serde(default)]
    critical: bool,
}

pub fn write_records(path: impl AsRef<Path>, records: &[KlRecord]) -> Result<(), KlstError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        let last = r.sequence.valid_len() - 1;
        let line = RecordLine {
            episode: r.episode,
            t: r.t,
            embedding: r.sequence.embeddings().row(last).to_vec(),
            mask_len: r.sequence.valid_len(),
            divergence: r.divergence,
            y: r.label.map(u8::from),
            critical: r.critical,
        };
        w.write_all(serde_json::to_string(&line).expect("record serializes").as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads records, rebuilding each sequence from the same episode's rows with
/// `t' ≤ t`, truncated to the stored `mask_len`.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<KlRecord>, KlstError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line)
            .map_err(|e| KlstError::InvalidData(format!("line {}: {e}", i + 1)))?;
        lines.push(rec);
    }
    let mut by_episode: BTreeMap<u64, Vec<(usize, Vec<f64>)>> = BTreeMap::new();
    for l in &lines {
        by_episode
            .entry(l.episode)
            .or_default()
            .push((l.t, l.embedding.clone()));
    }
    for rows in by_episode.values_mut() {
        rows.sort_by_key(|(t, _)| *t);
    }
    lines
        .into_iter()
        .map(|l| {
            let rows: Vec<&[f64]> = by_episode[&l.episode]
                .iter()
                .filter(|(t, _)| *t <= l.t)
                .map(|(_, z)| z.as_slice())
                .collect();
            if l.mask_len == 0 || l.mask_len > rows.len() {
                return Err(KlstError::InvalidData(format!(
                    "episode {} step {}: mask_len {} with {} rows available",
                    l.episode,
                    l.t,
                    l.mask_len,
                    rows.len()
                )));
            }
            let sequence = StepSequence::from_steps(&rows[rows.len() - l.mask_len..])?;
            Ok(KlRecord {
                episode: l.episode,
                t: l.t,
                sequence,
                divergence: l.divergence,
                label: l.y.map(|y| y == 1),
                critical: l.critical,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, PolicyPair};

    #[test]
    fn n_zero_rejected() {
        let sim = Simulator::synthetic(&EnvConfig::default()).unwrap();
        assert!(matches!(collect(&sim, 0, 0), Err(KlstError::InvalidConfig(_))));
    }

    #[test]
    fn identical_policies_have_zero_divergence() {
        let cfg = EnvConfig::default();
        let pair = PolicyPair::synthetic(&cfg);
        let same = PolicyPair::new(pair.high.clone(), pair.high.clone());
        let world = crate::env::CriticalStepWorld::new(cfg).unwrap();
        let sim = Simulator::new(world, same);
        let c = collect(&sim, 30, 0).unwrap();
        assert!(c
            .trajectories
            .iter()
            .flat_map(|t| &t.steps)
            .all(|s| s.divergence == Some(0.0)));
    }

    #[test]
    fn jsonl_roundtrip_rebuilds_sequences() {
        let sim = Simulator::synthetic(&EnvConfig::default()).unwrap();
        let c = collect(&sim, 20, 100).unwrap();
        let records = records_from_trajectories(&c.trajectories, 64).unwrap();
        let ds = SupervisionDataset::build(records, &LabelingConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (rp, cp) = (dir.path().join("d.jsonl"), dir.path().join("cdf.json"));
        ds.write_jsonl(&rp).unwrap();
        ds.write_cdf_snapshot(&cp).unwrap();
        let back = SupervisionDataset::read(&rp, &cp, &LabelingConfig::default()).unwrap();
        assert_eq!(back, ds);
    }
}
