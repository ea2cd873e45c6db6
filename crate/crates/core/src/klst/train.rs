use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::env::rng::{stream_rng, Stream};
use crate::nn::{self, AdamConfig, Matrix};
use crate::router::{argmax_low, RouterError, RouterParams, HIGH_PRECISION};

use super::{KlstError, SupervisionDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    BalancedAccuracy,
    Accuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlstTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of episodes held out for checkpoint selection.
    pub validation_fraction: f64,
    pub selection: Selection,
    pub seed: u64,
}

impl Default for KlstTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 64,
            learning_rate: 1e-4,
            validation_fraction: 0.1,
            selection: Selection::BalancedAccuracy,
            seed: 0,
        }
    }
}

impl KlstTrainConfig {
    pub fn validate(&self) -> Result<(), KlstError> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            problems.push(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(KlstError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Greedy-prediction quality against binary targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub accuracy: f64,
    /// Mean of the per-class recalls that are defined.
    pub balanced_accuracy: f64,
    /// `None` when there are no positives.
    pub positive_recall: Option<f64>,
    pub negative_recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

impl Classification {
    pub fn from_pairs(predicted: &[bool], actual: &[bool]) -> Self {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut tn = 0usize;
        let mut fn_ = 0usize;
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let positive_recall = ratio(tp, tp + fn_);
        let negative_recall = ratio(tn, tn + fp);
        let precision = ratio(tp, tp + fp);
        let defined: Vec<f64> = [positive_recall, negative_recall].into_iter().flatten().collect();
        let balanced_accuracy = if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        };
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        Self {
            accuracy: ratio(tp + tn, predicted.len()).unwrap_or(0.0),
            balanced_accuracy,
            positive_recall,
            negative_recall,
            precision,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean weighted cross-entropy over the epoch's training batches.
    pub train_loss: f64,
    pub validation: Classification,
}

#[derive(Debug, Clone)]
pub struct KlstOutcome {
    /// Parameters from the selected epoch.
    pub params: RouterParams,
    pub best_epoch: usize,
    pub epochs: Vec<EpochMetrics>,
    pub train_episodes: Vec<u64>,
    pub validation_episodes: Vec<u64>,
}

/// Splits episode ids into (train, validation) after a seeded shuffle.
fn split_episodes(dataset: &SupervisionDataset, cfg: &KlstTrainConfig) -> (Vec<u64>, Vec<u64>) {
    let mut episodes: Vec<u64> = dataset
        .records
        .iter()
        .map(|r| r.episode)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = stream_rng(cfg.seed, Stream::Training, 0, 1);
    episodes.shuffle(&mut rng);
    let n_val = if episodes.len() < 2 {
        0
    } else {
        ((episodes.len() as f64 * cfg.validation_fraction).round() as usize).clamp(
            usize::from(cfg.validation_fraction > 0.0),
            episodes.len() - 1,
        )
    };
    let val = episodes.split_off(episodes.len() - n_val);
    (episodes, val)
}

/// Greedy router predictions (`high` = positive) on the given records.
pub fn predict(params: &RouterParams, dataset: &SupervisionDataset, indices: &[usize]) -> Result<Vec<bool>, KlstError> {
    indices
        .iter()
        .map(|&i| {
            let probs = params.probabilities(&dataset.records[i].sequence)?;
            Ok(argmax_low(&probs) == HIGH_PRECISION)
        })
        .collect()
}

/// Weighted cross-entropy on one batch; accumulates gradients into `params`.
fn batch_step(
    params: &mut RouterParams,
    dataset: &SupervisionDataset,
    batch: &[usize],
) -> Result<f64, KlstError> {
    let share = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &i in batch {
        let rec = &dataset.records[i];
        let y = [usize::from(rec.label == Some(true))];
        let pass = params.forward(&rec.sequence)?;
        let probs = Matrix::row_vector(pass.probs());
        loss += share * nn::weighted_cross_entropy(&probs, &y, &dataset.class_weights).map_err(RouterError::from)?;
        let grad = nn::weighted_cross_entropy_backward(&probs, &y, &dataset.class_weights)
            .map_err(RouterError::from)?
            .scale(share);
        params.backward(&pass, grad.row(0))?;
    }
    Ok(loss)
}

/// Trains the router on the labeled dataset and returns the best epoch's weights.
pub fn train_klst(
    dataset: &SupervisionDataset,
    init: &RouterParams,
    cfg: &KlstTrainConfig,
) -> Result<KlstOutcome, KlstError> {
    cfg.validate()?;
    if dataset.records.is_empty() {
        return Err(KlstError::EmptyInput("no training records".into()));
    }
    if dataset.records.iter().any(|r| r.label.is_none()) {
        return Err(KlstError::InvalidData("dataset has unlabeled records".into()));
    }
    let (train_eps, val_eps) = split_episodes(dataset, cfg);
    let train_set: BTreeSet<u64> = train_eps.iter().copied().collect();
    let mut train_idx: Vec<usize> = Vec::new();
    let mut val_idx: Vec<usize> = Vec::new();
    for (i, r) in dataset.records.iter().enumerate() {
        if train_set.contains(&r.episode) {
            train_idx.push(i);
        } else {
            val_idx.push(i);
        }
    }
    if val_idx.is_empty() {
        // Single-episode datasets: select on the training records themselves.
        val_idx = train_idx.clone();
    }
    let val_labels: Vec<bool> = val_idx
        .iter()
        .map(|&i| dataset.records[i].label == Some(true))
        .collect();

    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut params = init.snapshot();
    let mut rng = stream_rng(cfg.seed, Stream::Training, 0, 0);
    let mut best: Option<(f64, usize, RouterParams)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            params.zero_grad();
            let loss = batch_step(&mut params, dataset, batch)?;
            params.adam_step(&adam);
            total += loss * batch.len() as f64;
        }
        let train_loss = total / train_idx.len() as f64;
        let predicted = predict(&params, dataset, &val_idx)?;
        let validation = Classification::from_pairs(&predicted, &val_labels);
        log::debug!(
            "epoch {epoch}: loss {train_loss:.5}, val acc {:.4}, balanced {:.4}",
            validation.accuracy,
            validation.balanced_accuracy
        );
        let score = match cfg.selection {
            Selection::BalancedAccuracy => validation.balanced_accuracy,
            Selection::Accuracy => validation.accuracy,
        };
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, params.snapshot()));
        }
        epochs.push(EpochMetrics {
            epoch,
            train_loss,
            validation,
        });
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    Ok(KlstOutcome {
        params,
        best_epoch,
        epochs,
        train_episodes: train_eps,
        validation_episodes: val_eps,
    })
}
