use serde::{Deserialize, Serialize};

use crate::baselines::{PolicyKind, SamplingPolicy};
use crate::benchmarks::BenchmarkFunction;
use crate::drift::DriftKind;
use crate::error::{invalid, Result};
use crate::explore::GridSpec;
use crate::monitor::ChartId;
use crate::predictor::{FeatureKind, FeatureMap};

/// Regression model used as the frozen predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// `None` picks identity features for Linkletter and splines otherwise.
    pub kind: Option<FeatureKind>,
    pub knots: usize,
    pub degree: usize,
    pub ridge: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: None,
            knots: 2,
            degree: 3,
            ridge: 1e-3,
        }
    }
}

/// One cell of the simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub function: BenchmarkFunction,
    pub policy: PolicyKind,
    pub epsilon: f64,
    /// Labels per step (`M`).
    pub budget: usize,
    /// Exploration bins per axis; `None` uses the function default.
    pub bins: Option<usize>,
    pub drift_kind: DriftKind,
    /// Drift magnitude in noise standard deviations.
    pub delta: f64,
    /// Drift region volume as a fraction of the domain.
    pub pi_d: f64,
    pub onset: u64,
    pub ramp_end: u64,
    pub lambda: f64,
    /// Top-r size; `None` uses `budget / 2`.
    pub r: Option<usize>,
    pub charts: Vec<ChartId>,
    pub arl0_target: f64,
    pub n_replications: usize,
    pub phase1_batches: usize,
    /// Initial design size; `None` uses `max(500, 6 * feature_dim)`.
    pub d0_size: Option<usize>,
    /// Exploitation turbulence; `None` uses the default rule.
    pub turbulence: Option<f64>,
    /// Restrict exploitation anchors to the most recent labels; `None` uses
    /// the full labeled history.
    pub anchor_window: Option<usize>,
    pub calibration_runs: usize,
    /// Geometric factor between successive bracket points in calibration.
    pub calibration_growth: f64,
    pub model: ModelSpec,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            function: BenchmarkFunction::Branin,
            policy: PolicyKind::Pass,
            epsilon: 0.2,
            budget: 20,
            bins: None,
            drift_kind: DriftKind::Abrupt,
            delta: 2.0,
            pi_d: 0.01,
            onset: 30,
            ramp_end: 60,
            lambda: 0.2,
            r: None,
            charts: vec![ChartId::A, ChartId::V],
            arl0_target: 200.0,
            n_replications: 100,
            phase1_batches: 50,
            d0_size: None,
            turbulence: None,
            anchor_window: None,
            calibration_runs: 1000,
            calibration_growth: 1.1,
            model: ModelSpec::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget < 2 {
            return Err(invalid("budget M must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        let r = self.top_r();
        if r == 0 || r > self.budget {
            return Err(invalid(format!("r = {r} must lie in 1..={}", self.budget)));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(invalid("lambda must lie in (0, 1]"));
        }
        if !(self.pi_d > 0.0 && self.pi_d < 1.0) {
            return Err(invalid("pi_d must lie in (0, 1)"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(invalid("delta must be finite and nonnegative"));
        }
        if self.onset == 0 || self.ramp_end < self.onset {
            return Err(invalid("need 1 <= onset <= ramp_end"));
        }
        if self.policy != PolicyKind::ScoreAdaptive && self.charts.is_empty() {
            return Err(invalid("at least one chart is required"));
        }
        if self.arl0_target < 1.0 {
            return Err(invalid("arl0_target must be at least 1"));
        }
        if self.n_replications < 2 {
            return Err(invalid("n_replications must be at least 2"));
        }
        if self.phase1_batches < 2 {
            return Err(invalid("phase1_batches must be at least 2"));
        }
        if self.calibration_runs < 100 {
            return Err(invalid("calibration_runs must be at least 100"));
        }
        if !(self.calibration_growth > 1.0) {
            return Err(invalid("calibration_growth must exceed 1"));
        }
        if self.anchor_window == Some(0) {
            return Err(invalid("anchor_window must be positive"));
        }
        if let Some(h) = self.turbulence {
            if !(h > 0.0) {
                return Err(invalid("turbulence must be positive"));
            }
        }
        Ok(())
    }

    pub fn sampling_policy(&self) -> Result<SamplingPolicy> {
        SamplingPolicy::new(self.policy, self.epsilon)
    }

    pub fn top_r(&self) -> usize {
        self.r.unwrap_or(self.budget / 2)
    }

    pub fn bins_per_axis(&self) -> usize {
        self.bins.unwrap_or(self.function.default_bins())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::uniform(self.function.domain(), self.bins_per_axis())
    }

    pub fn feature_map(&self) -> FeatureMap {
        let domain = self.function.domain();
        let kind = self.model.kind.unwrap_or(match self.function {
            BenchmarkFunction::Linkletter => FeatureKind::Identity,
            _ => FeatureKind::SplineInteractions,
        });
        match kind {
            FeatureKind::Identity => FeatureMap::identity(domain),
            FeatureKind::SplineInteractions => {
                FeatureMap::splines(domain, self.model.knots, self.model.degree)
            }
        }
    }

    pub fn initial_design_size(&self) -> usize {
        self.d0_size
            .unwrap_or_else(|| 500.max(6 * self.feature_map().feature_dim()))
    }

    /// Ridge penalty; identity features are fit by ordinary least squares.
    pub fn ridge(&self) -> f64 {
        match self.feature_map().kind {
            FeatureKind::Identity => 0.0,
            FeatureKind::SplineInteractions => self.model.ridge,
        }
    }

    /// `min(min_j w_j at pi_d = 1%, g_min)`, where `w_j` are the half-widths
    /// of a 1% drift box.
    pub fn turbulence_h(&self) -> Result<f64> {
        if let Some(h) = self.turbulence {
            return Ok(h);
        }
        let domain = self.function.domain();
        let d = domain.dim();
        let side = 0.01f64.powf(1.0 / d as f64);
        let w = (0..d)
            .map(|j| 0.5 * side * domain.width(j))
            .fold(f64::INFINITY, f64::min);
        Ok(w.min(self.grid()?.min_cell_width()))
    }

    /// Steps after which a run is censored: `onset + 20 * arl0_target`.
    pub fn horizon(&self) -> u64 {
        self.onset + (20.0 * self.arl0_target).ceil() as u64
    }

    pub fn calibration_horizon(&self) -> u64 {
        (10.0 * self.arl0_target).ceil() as u64
    }

    /// Parameters that determine the fitted model, Phase-I targets and
    /// control limits; cells sharing this key share one baseline.
    pub fn baseline_key(&self) -> String {
        let mut c = self.clone();
        c.drift_kind = DriftKind::Abrupt;
        c.delta = 0.0;
        c.pi_d = 0.01;
        c.n_replications = 2;
        c.onset = 1;
        c.ramp_end = 1;
        serde_json::to_string(&c).expect("config serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: ExperimentConfig =
            serde_json::from_str(s).map_err(|e| invalid(format!("config json: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.top_r(), 10);
        assert_eq!(c.horizon(), 4030);
        assert_eq!(c.initial_design_size(), 500);
        assert!((c.turbulence_h().unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn friedman_design_covers_feature_dimension() {
        let c = ExperimentConfig {
            function: BenchmarkFunction::Friedman,
            ..Default::default()
        };
        assert!(c.initial_design_size() >= c.feature_map().feature_dim());
    }

    #[test]
    fn baseline_key_ignores_drift() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            delta: 3.0,
            pi_d: 0.05,
            drift_kind: DriftKind::Incremental,
            ..a.clone()
        };
        assert_eq!(a.baseline_key(), b.baseline_key());
        let c = ExperimentConfig {
            epsilon: 0.5,
            ..a.clone()
        };
        assert_ne!(a.baseline_key(), c.baseline_key());
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        assert!(ExperimentConfig::from_json(r#"{"budget": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"unknown": 1}"#).is_err());
    }
}
