use serde::{Deserialize, Serialize};

use super::RouterError;

/// Shape of the router network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterConfig {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    /// Number of precision levels `K`; index 0 is the cheapest.
    pub num_precisions: usize,
    /// Longest history the router sees; older steps are dropped first.
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 256,
            num_precisions: 2,
            max_len: 64,
            dropout: 0.0,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<(), RouterError> {
        let mut problems = Vec::new();
        if self.embed_dim == 0 {
            problems.push("embed_dim must be positive".to_string());
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads.max(1)) {
            problems.push(format!(
                "embed_dim {} must be divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.num_layers == 0 {
            problems.push("num_layers must be at least 1".to_string());
        }
        if self.ffn_dim == 0 {
            problems.push("ffn_dim must be positive".to_string());
        }
        if self.num_precisions < 2 {
            problems.push(format!("num_precisions must be >= 2, got {}", self.num_precisions));
        }
        if self.max_len == 0 {
            problems.push("max_len must be at least 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(RouterError::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        RouterConfig::default().validate().unwrap();
        assert_eq!(RouterConfig::default().ffn_dim, 4 * 64);
    }

    #[test]
    fn rejects_bad_shapes() {
        let bad = RouterConfig {
            embed_dim: 10,
            num_heads: 4,
            num_precisions: 1,
            max_len: 0,
            ..RouterConfig::default()
        };
        let RouterError::InvalidConfig(msg) = bad.validate().unwrap_err() else {
            panic!("wrong error");
        };
        assert!(msg.contains("divisible"));
        assert!(msg.contains("num_precisions"));
        assert!(msg.contains("max_len"));
    }
}
