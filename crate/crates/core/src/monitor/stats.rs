//! Batch statistics computed from a step's residual vector.

use crate::error::{invalid, Error, Result};

use super::special::{digamma, trigamma};

/// Mean of the `r` largest absolute residuals.
pub fn top_r_mean(residuals: &[f64], r: usize) -> Result<f64> {
    if r == 0 || r > residuals.len() {
        return Err(invalid(format!("r = {r} outside 1..={}", residuals.len())));
    }
    let mut abs: Vec<f64> = residuals.iter().map(|e| e.abs()).collect();
    if r < abs.len() {
        // partition so that the r largest occupy the tail
        let k = abs.len() - r;
        abs.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
        abs.drain(..k);
    }
    abs.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(abs.iter().sum::<f64>() / r as f64)
}

/// Unbiased sample variance (divisor `n - 1`).
pub fn sample_variance(residuals: &[f64]) -> Result<f64> {
    let n = residuals.len();
    if n < 2 {
        return Err(invalid("sample variance needs at least two values"));
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    Ok(residuals.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64)
}

/// `ln s^2` of the batch.
pub fn log_variance(residuals: &[f64]) -> Result<f64> {
    let s2 = sample_variance(residuals)?;
    if s2 <= 0.0 {
        return Err(Error::DegenerateBatch);
    }
    Ok(s2.ln())
}

/// Mean and variance of `ln s^2` for a Gaussian batch of size `n` with
/// variance `sigma2`:
/// `E = ln sigma2 - ln(n-1) + psi(k/2) + ln 2`, `Var = psi_1(k/2)`, `k = n-1`.
pub fn log_s2_moments(sigma2: f64, n: usize) -> Result<(f64, f64)> {
    if !(sigma2 > 0.0) || n < 2 {
        return Err(invalid(format!(
            "need sigma2 > 0 and n >= 2, got {sigma2}, {n}"
        )));
    }
    let k = (n - 1) as f64;
    let mean = sigma2.ln() - k.ln() + digamma(k / 2.0) + std::f64::consts::LN_2;
    Ok((mean, trigamma(k / 2.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_r_examples() {
        assert_eq!(top_r_mean(&[3.0, -1.0, 2.0, 0.5], 2).unwrap(), 2.5);
        assert_eq!(top_r_mean(&[3.0, -1.0, 2.0, 0.5], 4).unwrap(), 6.5 / 4.0);
        assert!(top_r_mean(&[1.0], 0).is_err());
        assert!(top_r_mean(&[1.0], 2).is_err());
    }

    #[test]
    fn log_variance_examples() {
        assert_eq!(log_variance(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((log_variance(&[0.0, 2.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_variance(&[4.0, 4.0, 4.0]), Err(Error::DegenerateBatch));
        assert!(log_variance(&[1.0]).is_err());
    }

    #[test]
    fn moments_for_k_equal_two() {
        // n = 3 => k/2 = 1
        let (m, v) = log_s2_moments(1.0, 3).unwrap();
        let gamma = 0.577_215_664_901_532_9;
        assert!((m - (-(2f64.ln()) - gamma + 2f64.ln())).abs() < 1e-13);
        assert!((v - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-13);
    }

    #[test]
    fn moments_approach_log_sigma2() {
        let (m20, _) = log_s2_moments(2.0, 20).unwrap();
        assert!((m20 - 2f64.ln()).abs() < 0.06);
        let (m200, _) = log_s2_moments(2.0, 200).unwrap();
        assert!((m200 - 2f64.ln()).abs() < 0.01);
    }
}
