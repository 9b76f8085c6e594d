use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::stats::{log_variance, top_r_mean};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    TopRAbsMean,
    LogVariance,
}

/// Chart identifier used in alarm readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChartId {
    A,
    V,
}

impl ChartId {
    pub fn name(self) -> &'static str {
        match self {
            ChartId::A => "A",
            ChartId::V => "V",
        }
    }
}

/// Upper one-sided truncated EWMA:
/// `z_t = lambda * max(0, theta_t - theta0) + (1 - lambda) * z_{t-1}`, `z_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwmaChart {
    pub statistic: StatisticKind,
    pub lambda: f64,
    pub theta0: f64,
    pub z: f64,
    pub ucl: f64,
    /// Top-r size; unused by the log-variance chart.
    pub r: usize,
    pub t: u64,
}

impl EwmaChart {
    pub fn new(
        statistic: StatisticKind,
        lambda: f64,
        theta0: f64,
        ucl: f64,
        r: usize,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(invalid(format!("lambda must lie in (0, 1], got {lambda}")));
        }
        if statistic == StatisticKind::TopRAbsMean && r == 0 {
            return Err(invalid("top-r chart needs r >= 1"));
        }
        Ok(EwmaChart {
            statistic,
            lambda,
            theta0,
            z: 0.0,
            ucl,
            r,
            t: 0,
        })
    }

    pub fn top_r(lambda: f64, theta0: f64, ucl: f64, r: usize) -> Result<Self> {
        Self::new(StatisticKind::TopRAbsMean, lambda, theta0, ucl, r)
    }

    pub fn log_variance(lambda: f64, theta0: f64, ucl: f64) -> Result<Self> {
        Self::new(StatisticKind::LogVariance, lambda, theta0, ucl, 1)
    }

    pub fn id(&self) -> ChartId {
        match self.statistic {
            StatisticKind::TopRAbsMean => ChartId::A,
            StatisticKind::LogVariance => ChartId::V,
        }
    }

    /// The chart's statistic on a residual batch.
    pub fn statistic_of(&self, residuals: &[f64]) -> Result<f64> {
        match self.statistic {
            StatisticKind::TopRAbsMean => top_r_mean(residuals, self.r),
            StatisticKind::LogVariance => log_variance(residuals),
        }
    }

    pub fn update(&mut self, theta: f64) -> f64 {
        self.z = self.lambda * (theta - self.theta0).max(0.0) + (1.0 - self.lambda) * self.z;
        self.t += 1;
        self.z
    }

    pub fn exceeds(&self) -> bool {
        self.z > self.ucl
    }

    pub fn reset(&mut self) {
        self.z = 0.0;
        self.t = 0;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("chart serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: EwmaChart =
            serde_json::from_str(s).map_err(|e| invalid(format!("chart json: {e}")))?;
        if !(c.lambda > 0.0 && c.lambda <= 1.0) || c.z < 0.0 {
            return Err(invalid("chart snapshot violates lambda or z invariants"));
        }
        Ok(c)
    }
}

pub fn ewma_update(chart: &mut EwmaChart, theta: f64) -> f64 {
    chart.update(theta)
}

/// Time-varying EWMA limit
/// `theta0 + L sigma sqrt(lambda / (2 - lambda) * (1 - (1 - lambda)^(2t)))`.
pub fn analytic_ucl(theta0: f64, sigma_theta: f64, l: f64, lambda: f64, t: u64) -> f64 {
    let decay = (1.0 - lambda).powf(2.0 * t as f64);
    theta0 + l * sigma_theta * (lambda / (2.0 - lambda) * (1.0 - decay)).sqrt()
}

/// The `t -> infinity` limit of [`analytic_ucl`].
pub fn steady_state_ucl(theta0: f64, sigma_theta: f64, l: f64, lambda: f64) -> f64 {
    theta0 + l * sigma_theta * (lambda / (2.0 - lambda)).sqrt()
}

/// One step of the parallel monitors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartReading {
    pub theta_a: Option<f64>,
    pub theta_v: Option<f64>,
    pub z_a: Option<f64>,
    pub z_v: Option<f64>,
    pub alarm: bool,
    pub which: Vec<ChartId>,
}

/// Computes `A_t^(r)` and `V_t` for the batch, updates whichever charts are
/// present and alarms if any exceeds its limit. Statistics are computed
/// before either chart moves, so a degenerate batch leaves both untouched.
pub fn two_chart_step(
    chart_a: Option<&mut EwmaChart>,
    chart_v: Option<&mut EwmaChart>,
    residuals: &[f64],
) -> Result<ChartReading> {
    let theta_a = chart_a
        .as_ref()
        .map(|c| c.statistic_of(residuals))
        .transpose()?;
    let theta_v = chart_v
        .as_ref()
        .map(|c| c.statistic_of(residuals))
        .transpose()?;
    let mut which = Vec::new();
    let z_a = match (chart_a, theta_a) {
        (Some(c), Some(theta)) => {
            let z = c.update(theta);
            if c.exceeds() {
                which.push(ChartId::A);
            }
            Some(z)
        }
        _ => None,
    };
    let z_v = match (chart_v, theta_v) {
        (Some(c), Some(theta)) => {
            let z = c.update(theta);
            if c.exceeds() {
                which.push(ChartId::V);
            }
            Some(z)
        }
        _ => None,
    };
    Ok(ChartReading {
        theta_a,
        theta_v,
        z_a,
        z_v,
        alarm: !which.is_empty(),
        which,
    })
}

/// The charts run by one monitoring session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPair {
    pub a: Option<EwmaChart>,
    pub v: Option<EwmaChart>,
}

impl ChartPair {
    pub fn step(&mut self, residuals: &[f64]) -> Result<ChartReading> {
        two_chart_step(self.a.as_mut(), self.v.as_mut(), residuals)
    }

    pub fn reset(&mut self) {
        self.a
            .iter_mut()
            .chain(self.v.iter_mut())
            .for_each(EwmaChart::reset);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("charts serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: ChartPair =
            serde_json::from_str(s).map_err(|e| invalid(format!("chart json: {e}")))?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_holds_at_zero() {
        let mut c = EwmaChart::log_variance(0.2, 1.0, 5.0).unwrap();
        for theta in [0.5, 1.0, -3.0, 0.99] {
            assert_eq!(c.update(theta), 0.0);
        }
        assert_eq!(c.t, 4);
    }

    #[test]
    fn single_step_and_memoryless() {
        let mut c = EwmaChart::log_variance(0.2, 0.0, 5.0).unwrap();
        assert!((c.update(1.0) - 0.2).abs() < 1e-15);
        let mut m = EwmaChart::log_variance(1.0, 0.0, 5.0).unwrap();
        for theta in [2.0, -1.0, 0.5] {
            assert_eq!(m.update(theta), theta.max(0.0));
        }
    }

    #[test]
    fn analytic_limits() {
        assert_eq!(analytic_ucl(3.0, 2.0, 0.0, 0.2, 5), 3.0);
        let v = analytic_ucl(0.0, 1.0, 1.0, 0.2, 1);
        assert!((v - 0.2).abs() < 1e-12);
        let far = analytic_ucl(1.0, 2.0, 3.0, 0.2, 10_000);
        assert!((far - steady_state_ucl(1.0, 2.0, 3.0, 0.2)).abs() < 1e-12);
        assert!((steady_state_ucl(0.0, 1.0, 1.0, 0.2) - (0.2f64 / 1.8).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn huge_shift_alarms_within_three_steps() {
        // unit-variance statistics, limits at 3 sigma of the steady-state EWMA
        let ucl = 3.0 * (0.2f64 / 1.8).sqrt();
        let mut a = EwmaChart::top_r(0.2, 0.0, ucl, 2).unwrap();
        let mut v = EwmaChart::log_variance(0.2, 0.0, ucl).unwrap();
        let batch = [50.0, -49.0, 51.0, -50.5];
        let mut seen = Vec::new();
        for _ in 0..3 {
            let reading = two_chart_step(Some(&mut a), Some(&mut v), &batch).unwrap();
            assert_eq!(reading.alarm, !reading.which.is_empty());
            seen.extend(reading.which);
        }
        assert!(seen.contains(&ChartId::A) && seen.contains(&ChartId::V));
    }

    #[test]
    fn single_chart_mode_matches_lone_chart() {
        let mut paired = EwmaChart::log_variance(0.2, 0.1, 1.0).unwrap();
        let mut alone = paired.clone();
        let batches = [[0.1, 0.5, -0.2], [1.0, -2.0, 0.3], [0.0, 0.01, 0.02]];
        for b in &batches {
            let r = two_chart_step(None, Some(&mut paired), b).unwrap();
            let z = alone.update(log_variance(b).unwrap());
            assert_eq!(r.z_v.unwrap().to_bits(), z.to_bits());
            assert!(r.z_a.is_none());
        }
    }

    #[test]
    fn degenerate_batch_leaves_charts_untouched() {
        let mut a = EwmaChart::top_r(0.2, 0.0, 3.0, 1).unwrap();
        let mut v = EwmaChart::log_variance(0.2, 0.0, 3.0).unwrap();
        assert!(two_chart_step(Some(&mut a), Some(&mut v), &[1.0, 1.0]).is_err());
        assert_eq!((a.t, v.t), (0, 0));
    }

    #[test]
    fn snapshot_round_trip() {
        let mut pair = ChartPair {
            a: Some(EwmaChart::top_r(0.2, 1.0, 2.0, 4).unwrap()),
            v: None,
        };
        pair.step(&[3.0, 1.0, 2.0, 5.0, 0.0]).unwrap();
        let back = ChartPair::from_json(&pair.to_json()).unwrap();
        assert_eq!(pair, back);
        let c = pair.a.unwrap();
        assert_eq!(EwmaChart::from_json(&c.to_json()).unwrap(), c);
    }
}
