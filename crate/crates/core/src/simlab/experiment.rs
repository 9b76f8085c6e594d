use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{make_drift_region, DriftSpec};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, stream, RandomStream};

use super::baseline::{build_baseline, Baseline};
use super::config::ExperimentConfig;
use super::session::HistoryRow;

/// Redraws allowed per replication before giving up on false alarms.
pub const MAX_REDRAWS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Step of the first alarm; `None` when the run reached the horizon.
    pub alarm_time: Option<u64>,
    /// Post-onset steps up to and including the alarm step
    /// (`alarm_time - onset + 1`); the horizon count for censored runs.
    pub run_length: u64,
    pub censored: bool,
    pub false_alarm: bool,
    pub degenerate_steps: usize,
    pub drift: DriftSpec,
    pub sampling_history: Option<Vec<HistoryRow>>,
}

/// Draws a drift region and runs one monitored session until the first alarm
/// or the horizon.
pub fn run_once(
    baseline: &Baseline,
    config: &ExperimentConfig,
    rng: RandomStream,
    record: bool,
) -> Result<RunResult> {
    let mut rng = rng;
    let domain = &baseline.plan.domain;
    let region = make_drift_region(domain, config.pi_d, &mut rng)?;
    let ramp_end = match config.drift_kind {
        crate::drift::DriftKind::Abrupt => config.onset,
        crate::drift::DriftKind::Incremental => config.ramp_end,
    };
    let drift = DriftSpec {
        kind: config.drift_kind,
        delta: config.delta,
        sigma: config.function.noise().sigma,
        volume_ratio: config.pi_d,
        onset: config.onset,
        ramp_end,
        region,
    };
    drift.validate(domain)?;
    let mut session = baseline.session(Some(drift.clone()), rng)?;
    if record {
        session = session.with_recording();
    }
    let horizon = config.horizon();
    let mut alarm_time = None;
    while session.t() < horizon {
        if session.step()?.alarm {
            alarm_time = Some(session.t());
            break;
        }
    }
    let false_alarm = alarm_time.is_some_and(|t| t < config.onset);
    let run_length = match alarm_time {
        Some(t) if t >= config.onset => t - config.onset + 1,
        Some(_) => 0,
        None => horizon - config.onset + 1,
    };
    Ok(RunResult {
        alarm_time,
        run_length,
        censored: alarm_time.is_none(),
        false_alarm,
        degenerate_steps: session.degenerate_steps,
        drift,
        sampling_history: session.take_record(),
    })
}

/// Seed for attempt `attempt` of replication `rep`.
pub fn replication_seed(master: u64, rep: usize, attempt: u64) -> u64 {
    derive_seed(master, &format!("replication-{rep}"), attempt)
}

/// Runs replication `rep`, redrawing after false alarms. Returns the
/// accepted result and the number of discarded attempts.
pub fn run_replication(
    baseline: &Baseline,
    config: &ExperimentConfig,
    rep: usize,
) -> Result<(RunResult, u64)> {
    for attempt in 0..MAX_REDRAWS {
        let r = run_once(
            baseline,
            config,
            stream(replication_seed(config.seed, rep, attempt)),
            false,
        )?;
        if !r.false_alarm {
            return Ok((r, attempt));
        }
    }
    Err(invalid(format!(
        "replication {rep}: every one of {MAX_REDRAWS} attempts raised a false alarm"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArlSummary {
    pub mean: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub n_effective: usize,
    pub censored_count: usize,
    pub discarded: u64,
}

impl ArlSummary {
    pub fn from_run_lengths(
        lengths: &[u64],
        censored_count: usize,
        discarded: u64,
    ) -> Result<Self> {
        let n = lengths.len();
        if n < 2 {
            return Err(invalid("summary needs at least two run lengths"));
        }
        let mean = lengths.iter().map(|v| *v as f64).sum::<f64>() / n as f64;
        let var = lengths
            .iter()
            .map(|v| (*v as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        Ok(ArlSummary {
            mean,
            se,
            ci95: (mean - 1.96 * se, mean + 1.96 * se),
            n_effective: n,
            censored_count,
            discarded,
        })
    }
}

/// Replicated run lengths for one cell on a prepared baseline.
pub fn run_replications(baseline: &Baseline, config: &ExperimentConfig) -> Result<ArlSummary> {
    let results: Vec<Result<(RunResult, u64)>> = (0..config.n_replications)
        .into_par_iter()
        .map(|rep| run_replication(baseline, config, rep))
        .collect();
    let mut lengths = Vec::with_capacity(results.len());
    let mut censored = 0;
    let mut discarded = 0;
    for r in results {
        let (run, d) = r?;
        lengths.push(run.run_length);
        censored += run.censored as usize;
        discarded += d;
    }
    if 2 * censored > lengths.len() {
        return Err(Error::Unstable {
            censored,
            total: lengths.len(),
        });
    }
    ArlSummary::from_run_lengths(&lengths, censored, discarded)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ArlSummary> {
    let baseline = build_baseline(config)?;
    run_replications(&baseline, config)
}

/// Baselines keyed by [`ExperimentConfig::baseline_key`].
#[derive(Default)]
pub struct BaselineCache {
    entries: BTreeMap<String, Baseline>,
}

impl BaselineCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, config: &ExperimentConfig) -> Result<&Baseline> {
        let key = config.baseline_key();
        if !self.entries.contains_key(&key) {
            let b = build_baseline(config)?;
            self.entries.insert(key.clone(), b);
        }
        Ok(&self.entries[&key])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub config: ExperimentConfig,
    pub summary: std::result::Result<ArlSummary, String>,
}

/// Runs every cell, sharing baselines between cells that differ only in the
/// drift. Cell failures are recorded and do not stop the sweep.
pub fn sweep(configs: &[ExperimentConfig], cache: &mut BaselineCache) -> Result<Vec<CellResult>> {
    if configs.is_empty() {
        return Err(invalid("sweep needs at least one cell"));
    }
    let mut out = Vec::with_capacity(configs.len());
    for c in configs {
        let summary = cache
            .get(c)
            .and_then(|b| run_replications(b, c))
            .map_err(|e| e.to_string());
        out.push(CellResult {
            config: c.clone(),
            summary,
        });
    }
    Ok(out)
}

pub const RESULTS_HEADER: &str =
    "function,policy,epsilon,pi_d,delta,kind,arl1_mean,arl1_se,ci_lo,ci_hi,n,censored,discarded_false_alarms";

/// One CSV line (no trailing newline) for a successful cell.
pub fn results_row(config: &ExperimentConfig, s: &ArlSummary) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        config.function.name(),
        config.policy.name(),
        config.epsilon,
        config.pi_d,
        config.delta,
        config.drift_kind.name(),
        s.mean,
        s.se,
        s.ci95.0,
        s.ci95.1,
        s.n_effective,
        s.censored_count,
        s.discarded
    )
}

/// Results table for the successful cells, in input order.
pub fn results_csv(cells: &[CellResult]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for c in cells {
        if let Ok(s) = &c.summary {
            out.push_str(&results_row(&c.config, s));
            out.push('\n');
        }
    }
    out
}

/// Sampling history of one run: `t, x1..xd, y, source, in_drift_region`.
pub fn history_csv(rows: &[HistoryRow], dim: usize) -> String {
    let mut out = String::from("t");
    for j in 1..=dim {
        let _ = write!(out, ",x{j}");
    }
    out.push_str(",y,source,in_drift_region\n");
    for r in rows {
        let _ = write!(out, "{}", r.t);
        for v in &r.x.0 {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(
            out,
            ",{},{},{}",
            r.y,
            r.source.name(),
            r.in_drift_region as u8
        );
    }
    out
}
