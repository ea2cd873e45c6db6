use serde::{Deserialize, Serialize};

use super::KlstError;

/// Right-continuous empirical CDF, `F(x) = #{v ≤ x} / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(values: &[f64]) -> Result<Self, KlstError> {
        if values.is_empty() {
            return Err(KlstError::EmptyInput("empirical CDF of no values".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(KlstError::InvalidData(format!("non-finite value {v} in CDF input")));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    /// Rebuilds from a stored snapshot, which must already be sorted.
    pub fn from_sorted(sorted: Vec<f64>) -> Result<Self, KlstError> {
        if sorted.is_empty() {
            return Err(KlstError::EmptyInput("empty CDF snapshot".into()));
        }
        if sorted.windows(2).any(|w| w[0] > w[1]) || sorted.iter().any(|v| !v.is_finite()) {
            return Err(KlstError::InvalidData("CDF snapshot is not sorted and finite".into()));
        }
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    /// `#{v ≤ x}`; tied values all share the highest rank.
    pub fn rank(&self, x: f64) -> usize {
        self.sorted.partition_point(|&v| v <= x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.rank(x) as f64 / self.sorted.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Ties take the highest rank among them (`≤` counting).
    HighestRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    pub tau: f64,
    pub tie_rule: TieRule,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            tau: 0.85,
            tie_rule: TieRule::HighestRank,
        }
    }
}

impl LabelingConfig {
    pub fn validate(&self) -> Result<(), KlstError> {
        if self.tau > 0.0 && self.tau < 1.0 {
            Ok(())
        } else {
            Err(KlstError::InvalidConfig(format!("tau must lie in (0, 1), got {}", self.tau)))
        }
    }
}

/// `y = 1` iff `CDF(D) ≥ τ`.
pub fn label(divergence: f64, cdf: &EmpiricalCdf, config: &LabelingConfig) -> bool {
    match config.tie_rule {
        TieRule::HighestRank => cdf.eval(divergence) >= config.tau,
    }
}

/// Labels for a list of divergences under one CDF.
pub fn label_values(divergences: &[f64], cdf: &EmpiricalCdf, config: &LabelingConfig) -> Vec<bool> {
    divergences.iter().map(|&d| label(d, cdf, config)).collect()
}

/// Balanced two-class weights `w_c = n / (2 n_c)`; an absent class gets 0.
pub fn class_weights(labels: &[bool]) -> Result<[f64; 2], KlstError> {
    if labels.is_empty() {
        return Err(KlstError::EmptyInput("class weights of no labels".into()));
    }
    let n = labels.len() as f64;
    let positives = labels.iter().filter(|&&y| y).count();
    let counts = [labels.len() - positives, positives];
    let mut weights = [0.0; 2];
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            log::warn!("class {c} is absent from the labels; its weight is set to 0");
        } else {
            weights[c] = n / (2.0 * count as f64);
        }
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_examples() {
        let cdf = EmpiricalCdf::new(&[4.0, 2.0, 3.0, 1.0]).unwrap();
        assert_eq!(cdf.eval(1.0), 0.25);
        assert_eq!(cdf.eval(4.0), 1.0);
        assert_eq!(cdf.eval(0.5), 0.0);
        assert_eq!(EmpiricalCdf::new(&[2.0; 5]).unwrap().eval(2.0), 1.0);
        assert_eq!(EmpiricalCdf::new(&[0.0, 0.0, 1.0, 1.0]).unwrap().eval(0.0), 0.5);
        assert!(EmpiricalCdf::new(&[]).is_err());
    }

    #[test]
    fn hundred_distinct_values_give_sixteen_positives() {
        let values: Vec<f64> = (0..100).map(|i| (i * 37 % 100) as f64 * 0.1).collect();
        let cdf = EmpiricalCdf::new(&values).unwrap();
        let labels = label_values(&values, &cdf, &LabelingConfig::default());
        assert_eq!(labels.iter().filter(|&&y| y).count(), 16);
    }

    #[test]
    fn ties_and_boundaries() {
        let cfg = LabelingConfig { tau: 0.3, ..Default::default() };
        let equal = [0.7; 9];
        let cdf = EmpiricalCdf::new(&equal).unwrap();
        assert!(label_values(&equal, &cdf, &cfg).into_iter().all(|y| y));
        let values: Vec<f64> = (0..50).map(f64::from).collect();
        let cdf = EmpiricalCdf::new(&values).unwrap();
        let near_one = LabelingConfig { tau: 1.0 - 1e-9, ..Default::default() };
        let labels = label_values(&values, &cdf, &near_one);
        assert_eq!(labels.iter().filter(|&&y| y).count(), 1);
        assert!(labels[49]);
    }

    #[test]
    fn weights() {
        let mut labels = vec![false; 85];
        labels.extend([true; 15]);
        let w = class_weights(&labels).unwrap();
        assert!((w[0] - 100.0 / 170.0).abs() < 1e-12);
        assert!((w[1] - 100.0 / 30.0).abs() < 1e-12);
        let applied: f64 = labels.iter().map(|&y| w[usize::from(y)]).sum::<f64>() / 100.0;
        assert!((applied - 1.0).abs() < 1e-12);
        let mut half = vec![false; 50];
        half.extend([true; 50]);
        assert_eq!(class_weights(&half).unwrap(), [1.0, 1.0]);
        assert_eq!(class_weights(&[false; 7]).unwrap(), [0.5, 0.0]);
    }

    #[test]
    fn tau_range() {
        assert!(LabelingConfig { tau: 1.0, ..Default::default() }.validate().is_err());
        assert!(LabelingConfig { tau: 0.0, ..Default::default() }.validate().is_err());
        LabelingConfig::default().validate().unwrap();
    }
}
