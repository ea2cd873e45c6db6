use crate::nn::Matrix;

use super::RouterError;

/// The router input: step embeddings `z_1..z_t` and a validity mask.
///
/// The mask is a prefix of ones followed by padding zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSequence {
    embeddings: Matrix,
    mask: Vec<bool>,
}

impl StepSequence {
    pub fn new(embeddings: Matrix, mask: Vec<bool>) -> Result<Self, RouterError> {
        if embeddings.rows() != mask.len() {
            return Err(RouterError::InvalidSequence(format!(
                "{} embeddings but mask of length {}",
                embeddings.rows(),
                mask.len()
            )));
        }
        let valid = mask.iter().take_while(|&&m| m).count();
        if valid == 0 {
            return Err(RouterError::EmptySequence);
        }
        if mask[valid..].iter().any(|&m| m) {
            return Err(RouterError::InvalidSequence(
                "mask must be a prefix of ones followed by zeros".into(),
            ));
        }
        Ok(Self { embeddings, mask })
    }

    /// A fully valid sequence from per-step vectors.
    pub fn from_steps<R: AsRef<[f64]>>(steps: &[R]) -> Result<Self, RouterError> {
        let embeddings = Matrix::from_rows(steps)?;
        let mask = vec![true; embeddings.rows()];
        Self::new(embeddings, mask)
    }

    /// Pads with zero rows up to `len` (no-op when already that long).
    pub fn padded_to(&self, len: usize) -> Self {
        if len <= self.len() {
            return self.clone();
        }
        let d = self.dim();
        let mut embeddings = Matrix::zeros(len, d);
        for r in 0..self.len() {
            embeddings.row_mut(r).copy_from_slice(self.embeddings.row(r));
        }
        let mut mask = self.mask.clone();
        mask.resize(len, false);
        Self { embeddings, mask }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    /// Mutable access to the raw rows, padded ones included.
    pub fn embeddings_mut(&mut self) -> &mut Matrix {
        &mut self.embeddings
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Keeps the most recent `max_len` positions.
    ///
    /// Trailing padding is dropped first; if the valid prefix alone is longer
    /// than `max_len`, the oldest valid steps go.
    pub fn truncated(&self, max_len: usize) -> Self {
        if self.len() <= max_len {
            return self.clone();
        }
        let valid = self.valid_len();
        if valid <= max_len {
            return Self {
                embeddings: self.embeddings.slice_rows(0, max_len),
                mask: self.mask[..max_len].to_vec(),
            };
        }
        Self {
            embeddings: self.embeddings.slice_rows(valid - max_len, valid),
            mask: vec![true; max_len],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize) -> StepSequence {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, -(i as f64)]).collect();
        StepSequence::from_steps(&rows).unwrap()
    }

    #[test]
    fn rejects_bad_masks() {
        let m = Matrix::zeros(3, 2);
        assert!(matches!(
            StepSequence::new(m.clone(), vec![false, false, false]),
            Err(RouterError::EmptySequence)
        ));
        assert!(StepSequence::new(m.clone(), vec![true, false, true]).is_err());
        assert!(StepSequence::new(m, vec![true, true]).is_err());
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let s = seq(7);
        let t = s.truncated(4);
        assert_eq!(t.len(), 4);
        assert_eq!(t.embeddings().row(0), &[3.0, -3.0]);
        assert_eq!(t.embeddings().row(3), &[6.0, -6.0]);
    }

    #[test]
    fn truncation_drops_padding_first() {
        let s = seq(3).padded_to(8);
        let t = s.truncated(5);
        assert_eq!(t.len(), 5);
        assert_eq!(t.valid_len(), 3);
        assert_eq!(t.embeddings().row(0), &[0.0, 0.0]);
    }
}
