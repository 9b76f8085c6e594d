use std::path::Path;

use anyhow::{Context, Result};
use pass_core::simlab::{
    build_baseline, build_baseline_bootstrap, in_control_arl, Baseline, CalibrationArtifact,
};
use serde::{Deserialize, Serialize};

use crate::config::{CalibrationMethod, RunConfig};

/// Fresh in-control check of calibrated limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub runs: usize,
    pub horizon: u64,
    pub arl0: f64,
    pub censored: usize,
}

pub fn calibrate_baseline(cfg: &RunConfig) -> Result<Baseline> {
    let c = &cfg.experiment;
    let s = &cfg.calibration;
    Ok(match s.method {
        CalibrationMethod::Mc => build_baseline(c),
        CalibrationMethod::Bootstrap => build_baseline_bootstrap(c, s.replays, s.quantile),
    }?)
}

/// Calibrates the base experiment and writes `calibration.json`,
/// `calibration_trace.txt` and, if requested, `verification.json`.
pub fn calibrate(cfg: &RunConfig, out: &Path) -> Result<(CalibrationArtifact, Option<Verification>)> {
    let b = calibrate_baseline(cfg)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let artifact = b.artifact();
    std::fs::write(out.join("calibration.json"), serde_json::to_string_pretty(&artifact)?)?;
    let mut trace = b.calibration_trace.join("\n");
    trace.push('\n');
    std::fs::write(out.join("calibration_trace.txt"), trace)?;
    let verification = if cfg.calibration.verify_runs > 0 {
        let horizon = cfg.experiment.calibration_horizon();
        let est = in_control_arl(&b, cfg.calibration.verify_runs, horizon, "verification")?;
        let v = Verification {
            runs: est.runs,
            horizon,
            arl0: est.arl,
            censored: est.censored,
        };
        std::fs::write(out.join("verification.json"), serde_json::to_string_pretty(&v)?)?;
        Some(v)
    } else {
        None
    };
    Ok((artifact, verification))
}
