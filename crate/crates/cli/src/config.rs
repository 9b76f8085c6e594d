use anyhow::{bail, Context, Result};
use pass_core::baselines::PolicyKind;
use pass_core::benchmarks::BenchmarkFunction;
use pass_core::drift::DriftKind;
use pass_core::simlab::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::stream::StreamSettings;

pub const SCHEMA_VERSION: u32 = 1;

/// Top-level run document read by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Base cell; grid axes override its fields.
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub grid: Option<Grid>,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default)]
    pub stream: StreamSettings,
    /// Write the sampling history of the first replication of every cell.
    #[serde(default)]
    pub record_history: bool,
}

/// Sweep axes. A missing axis keeps the base value; an empty list yields no
/// cells.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub function: Option<Vec<BenchmarkFunction>>,
    pub policy: Option<Vec<PolicyKind>>,
    pub epsilon: Option<Vec<f64>>,
    pub pi_d: Option<Vec<f64>>,
    pub drift_kind: Option<Vec<DriftKind>>,
    pub delta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMethod {
    Mc,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub method: CalibrationMethod,
    /// Bootstrap replays.
    pub replays: usize,
    /// Bootstrap quantile of the chart maximum.
    pub quantile: f64,
    /// Fresh in-control runs used to verify the limits after calibration.
    pub verify_runs: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            method: CalibrationMethod::Mc,
            replays: 1000,
            quantile: 0.995,
            verify_runs: 0,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            experiment: ExperimentConfig::default(),
            grid: None,
            calibration: CalibrationSettings::default(),
            stream: StreamSettings::default(),
            record_history: false,
        }
    }
}

fn axis<T: Clone>(axis: &Option<Vec<T>>, base: T) -> Vec<T> {
    axis.clone().unwrap_or_else(|| vec![base])
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(s).context("parsing run config")?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&s).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            );
        }
        self.experiment.validate()?;
        let q = self.calibration.quantile;
        if !(q > 0.0 && q < 1.0) {
            bail!("calibration quantile must lie in (0, 1)");
        }
        if self.calibration.replays < 2 {
            bail!("calibration replays must be at least 2");
        }
        self.stream.validate()?;
        Ok(())
    }

    /// Expands the grid in the order function, policy, epsilon, pi_d,
    /// drift kind, delta.
    pub fn cells(&self) -> Result<Vec<ExperimentConfig>> {
        let base = &self.experiment;
        let Some(g) = &self.grid else {
            return Ok(vec![base.clone()]);
        };
        let mut out = Vec::new();
        for function in axis(&g.function, base.function) {
            for policy in axis(&g.policy, base.policy) {
                for epsilon in axis(&g.epsilon, base.epsilon) {
                    for pi_d in axis(&g.pi_d, base.pi_d) {
                        for drift_kind in axis(&g.drift_kind, base.drift_kind) {
                            for delta in axis(&g.delta, base.delta) {
                                let c = ExperimentConfig {
                                    function,
                                    policy,
                                    epsilon,
                                    pi_d,
                                    drift_kind,
                                    delta,
                                    ..base.clone()
                                };
                                c.validate().with_context(|| {
                                    format!(
                                        "grid cell {} {} eps={epsilon} pi_d={pi_d} {} delta={delta}",
                                        function.name(),
                                        policy.name(),
                                        drift_kind.name()
                                    )
                                })?;
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.experiment.seed = s;
            self.stream.seed = s;
        }
        self
    }
}

/// Named configurations shipped with the binary.
pub fn preset(name: &str) -> Result<RunConfig> {
    let subset = |kind: DriftKind| RunConfig {
        experiment: ExperimentConfig {
            epsilon: 0.2,
            charts: vec![pass_core::monitor::ChartId::V],
            pi_d: 0.01,
            drift_kind: kind,
            ..Default::default()
        },
        grid: Some(Grid {
            function: Some(vec![BenchmarkFunction::Branin, BenchmarkFunction::Ishigami]),
            delta: Some(vec![1.0, 2.0, 3.0]),
            ..Default::default()
        }),
        ..Default::default()
    };
    match name {
        "table1-subset" => Ok(subset(DriftKind::Abrupt)),
        "table2-subset" => Ok(subset(DriftKind::Incremental)),
        "branin-demo" => Ok(RunConfig {
            experiment: ExperimentConfig {
                epsilon: 0.5,
                charts: vec![pass_core::monitor::ChartId::V],
                n_replications: 20,
                calibration_runs: 300,
                ..Default::default()
            },
            grid: Some(Grid {
                delta: Some(vec![2.0, 3.0]),
                ..Default::default()
            }),
            record_history: true,
            ..Default::default()
        }),
        other => bail!(
            "unknown preset {other:?}; expected table1-subset, table2-subset or branin-demo"
        ),
    }
}

pub const PRESETS: [&str; 3] = ["table1-subset", "table2-subset", "branin-demo"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_uses_defaults() {
        let c = RunConfig::from_json(r#"{"schema_version": 1}"#).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.cells().unwrap().len(), 1);
    }

    #[test]
    fn rejects_bad_version_and_unknown_keys() {
        assert!(RunConfig::from_json(r#"{"schema_version": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"schema_version": 1, "extra": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"schema_version": 1, "grid": {"eps": [0.1]}}"#).is_err());
    }

    #[test]
    fn grid_expands_in_fixed_order() {
        let c = preset("table1-subset").unwrap();
        let cells = c.cells().unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].function, BenchmarkFunction::Branin);
        assert_eq!(cells[2].delta, 3.0);
        assert_eq!(cells[3].function, BenchmarkFunction::Ishigami);
        let empty = RunConfig {
            grid: Some(Grid {
                delta: Some(vec![]),
                ..Default::default()
            }),
            ..Default::default()
        };
        assert!(empty.cells().unwrap().is_empty());
    }

    #[test]
    fn presets_round_trip() {
        for p in PRESETS {
            let c = preset(p).unwrap();
            assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        }
        assert!(preset("nope").is_err());
    }
}
