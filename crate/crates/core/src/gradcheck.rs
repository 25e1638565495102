//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

/// Default step for 64-bit checks.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Largest relative disagreement between `analytic` and the central
/// difference of `f` at `theta`, measured as
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_check<F>(f: F, theta: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if theta.len() != analytic.len() {
        return Err(Error::dim("finite_diff_check", &[theta.len()], &[analytic.len()]));
    }
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let f0 = f(theta)?;
    if !f0.is_finite() {
        return Err(Error::Evaluation(format!("objective is not finite at theta: {f0}")));
    }
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let plus = f(&probe)?;
        probe[i] = theta[i] - h;
        let minus = f(&probe)?;
        probe[i] = theta[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Evaluation(format!("objective is not finite around parameter {i}")));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = finite_diff_check(|t| Ok(t[0] * t[0]), &[3.0], &[6.0], DEFAULT_STEP).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn planted_ten_percent_fault_is_detected() {
        let err = finite_diff_check(|t| Ok(t[0] * t[0]), &[3.0], &[6.6], DEFAULT_STEP).unwrap();
        assert!((err - 0.6 / 6.6).abs() < 1e-6, "{err}");
        assert!(err > 0.09);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let r = finite_diff_check(|_| Ok(f64::NAN), &[1.0], &[0.0], DEFAULT_STEP);
        assert!(matches!(r, Err(Error::Evaluation(_))));
    }
}
