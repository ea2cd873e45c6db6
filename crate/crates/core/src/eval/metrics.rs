use super::EvalError;

/// Gain per high-precision call in percentage points of success per unit of
/// high-precision ratio: `100 · (S − S_weak) / c`.
///
/// `S` and `S_weak` are fractions in `[0, 1]`. Returns `Ok(None)` at `c = 0`,
/// where the gain is undefined.
pub fn ghc(success: f64, weak_success: f64, ratio: f64) -> Result<Option<f64>, EvalError> {
    for (name, v) in [("S", success), ("S_weak", weak_success), ("c", ratio)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(EvalError::Domain(format!("{name} = {v} is outside [0, 1]")));
        }
    }
    if ratio == 0.0 {
        return Ok(None);
    }
    Ok(Some(100.0 * (success - weak_success) / ratio))
}
