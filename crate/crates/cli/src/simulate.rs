use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use pass_core::simlab::{
    build_baseline, build_baseline_bootstrap, history_csv, results_row, run_once, run_replications,
    ArlSummary, Baseline, ExperimentConfig, RESULTS_HEADER,
};
use pass_core::rng::derived_stream;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{CalibrationMethod, CalibrationSettings, RunConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Baselines shared between cells, built with the configured calibration.
pub struct Baselines {
    settings: CalibrationSettings,
    entries: BTreeMap<String, std::result::Result<Baseline, String>>,
}

impl Baselines {
    pub fn new(settings: CalibrationSettings) -> Self {
        Baselines {
            settings,
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&mut self, c: &ExperimentConfig) -> std::result::Result<&Baseline, String> {
        let key = c.baseline_key();
        let s = &self.settings;
        self.entries
            .entry(key)
            .or_insert_with(|| {
                log::info!("calibrating baseline for {} {} eps={}", c.function, c.policy, c.epsilon);
                match s.method {
                    CalibrationMethod::Mc => build_baseline(c),
                    CalibrationMethod::Bootstrap => build_baseline_bootstrap(c, s.replays, s.quantile),
                }
                .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(Clone::clone)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Error,
}

/// Record of one finished cell; a run skips cells whose manifest matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellManifest {
    pub index: usize,
    pub digest: String,
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub status: CellStatus,
    pub summary: Option<ArlSummary>,
    pub error: Option<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config_digest: String,
    pub cells: usize,
    pub failed: usize,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulateReport {
    pub cells: usize,
    pub computed: usize,
    pub resumed: usize,
    pub failed: usize,
}

fn cell_digest(c: &ExperimentConfig, cal: &CalibrationSettings, record: bool) -> String {
    let key = format!(
        "{}\n{}\n{record}",
        serde_json::to_string(c).expect("config serializes"),
        serde_json::to_string(cal).expect("settings serialize")
    );
    sha256_hex(key.as_bytes())
}

fn load_manifest(path: &Path, digest: &str) -> Option<CellManifest> {
    let text = std::fs::read_to_string(path).ok()?;
    let m: CellManifest = serde_json::from_str(&text).ok()?;
    (m.digest == digest && m.status == CellStatus::Ok && m.summary.is_some()).then_some(m)
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn run_cell(
    c: &ExperimentConfig,
    baselines: &mut Baselines,
    record: bool,
    out: &Path,
    stem: &str,
) -> std::result::Result<(ArlSummary, Vec<String>), String> {
    let b = baselines.get(c)?;
    let summary = run_replications(b, c).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    if record {
        let rng = derived_stream(c.seed, "history", 0);
        let run = run_once(b, c, rng, true).map_err(|e| e.to_string())?;
        let rows = run.sampling_history.unwrap_or_default();
        let name = format!("cells/{stem}_history.csv");
        write_atomic(&out.join(&name), &history_csv(&rows, c.function.dim()))
            .map_err(|e| e.to_string())?;
        outputs.push(name);
    }
    Ok((summary, outputs))
}

/// Runs every grid cell, writing `results.csv`, `errors.csv`, per-cell
/// manifests under `cells/` and `manifest.json`. Cells with a matching
/// manifest from an earlier run are not recomputed.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<SimulateReport> {
    let cells = cfg.cells()?;
    std::fs::create_dir_all(out.join("cells"))
        .with_context(|| format!("creating {}", out.display()))?;
    let mut baselines = Baselines::new(cfg.calibration.clone());
    let mut report = SimulateReport {
        cells: cells.len(),
        ..Default::default()
    };
    let mut manifests = Vec::with_capacity(cells.len());
    for (index, c) in cells.iter().enumerate() {
        let digest = cell_digest(c, &cfg.calibration, cfg.record_history);
        let stem = format!("cell-{index:04}-{}", &digest[..12]);
        let path = out.join("cells").join(format!("{stem}.json"));
        if let Some(m) = load_manifest(&path, &digest) {
            log::info!("cell {index}: reusing {}", path.display());
            report.resumed += 1;
            manifests.push(m);
            continue;
        }
        log::info!(
            "cell {index}: {} {} eps={} pi_d={} {} delta={}",
            c.function,
            c.policy,
            c.epsilon,
            c.pi_d,
            c.drift_kind.name(),
            c.delta
        );
        let (status, summary, error, outputs) =
            match run_cell(c, &mut baselines, cfg.record_history, out, &stem) {
                Ok((s, o)) => (CellStatus::Ok, Some(s), None, o),
                Err(e) => {
                    log::warn!("cell {index} failed: {e}");
                    report.failed += 1;
                    (CellStatus::Error, None, Some(e), Vec::new())
                }
            };
        let m = CellManifest {
            index,
            digest,
            version: VERSION.into(),
            seed: c.seed,
            config: c.clone(),
            status,
            summary,
            error,
            outputs,
        };
        write_atomic(&path, &serde_json::to_string_pretty(&m)?)?;
        report.computed += 1;
        manifests.push(m);
    }

    let mut results = format!("{RESULTS_HEADER}\n");
    let mut errors = csv::Writer::from_writer(Vec::new());
    errors.write_record(["index", "function", "policy", "epsilon", "pi_d", "delta", "kind", "error"])?;
    for m in &manifests {
        let c = &m.config;
        match (&m.summary, &m.error) {
            (Some(s), _) => {
                results.push_str(&results_row(c, s));
                results.push('\n');
            }
            (None, e) => errors.write_record([
                m.index.to_string(),
                c.function.name().into(),
                c.policy.name().into(),
                c.epsilon.to_string(),
                c.pi_d.to_string(),
                c.delta.to_string(),
                c.drift_kind.name().into(),
                e.clone().unwrap_or_default(),
            ])?,
        }
    }
    write_atomic(&out.join("results.csv"), &results)?;
    let errors = String::from_utf8(errors.into_inner()?)?;
    write_atomic(&out.join("errors.csv"), &errors)?;

    let mut outputs = vec!["results.csv".to_string(), "errors.csv".to_string()];
    outputs.extend(manifests.iter().flat_map(|m| m.outputs.iter().cloned()));
    let run = RunManifest {
        version: VERSION.into(),
        seed: cfg.experiment.seed,
        config_digest: sha256_hex(cfg.to_json().as_bytes()),
        cells: cells.len(),
        failed: manifests.iter().filter(|m| m.status == CellStatus::Error).count(),
        outputs,
    };
    write_atomic(&out.join("manifest.json"), &serde_json::to_string_pretty(&run)?)?;
    Ok(report)
}
