#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KlError {
    #[error("distributions have different support sizes ({p} vs {q})")]
    LengthMismatch { p: usize, q: usize },
    #[error("infinite divergence: p[{index}] > 0 but q[{index}] = 0")]
    InfiniteDivergence { index: usize },
}

/// `KL(p ‖ q) = Σ p_i ln(p_i / q_i)` with `0 · ln(0 / q) = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, KlError> {
    if p.len() != q.len() {
        return Err(KlError::LengthMismatch {
            p: p.len(),
            q: q.len(),
        });
    }
    let mut total = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(KlError::InfiniteDivergence { index });
        }
        total += pi * (pi / qi).ln();
    }
    // Rounding can leave a tiny negative sum for near-identical inputs.
    Ok(total.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let d = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        let oracle = 0.5 * (5.0f64 / 9.0).ln() + 0.5 * 5.0f64.ln();
        assert!((d - oracle).abs() < 1e-12);
        assert!((d - 0.5108).abs() < 1e-4);
        let d = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((d - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unsupported_mass_is_an_error() {
        assert_eq!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(KlError::InfiniteDivergence { index: 1 })
        );
        assert!(kl_divergence(&[0.0, 1.0], &[1.0, 0.0]).is_err());
        assert!(matches!(
            kl_divergence(&[1.0], &[0.5, 0.5]),
            Err(KlError::LengthMismatch { .. })
        ));
    }
}
