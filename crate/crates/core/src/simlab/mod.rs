//! End-to-end monitoring runs on benchmark surfaces with injected drift,
//! and replicated run-length experiments.

pub mod baseline;
pub mod config;
pub mod experiment;
pub mod session;

pub use baseline::{build_baseline, build_baseline_bootstrap, in_control_arl, Baseline, CalibrationArtifact, MewmaBaseline};
pub use config::{ExperimentConfig, ModelSpec};
pub use experiment::{
    history_csv, replication_seed, results_csv, results_row, run_experiment, run_once,
    run_replication, run_replications, sweep, ArlSummary, BaselineCache, CellResult, RunResult,
    RESULTS_HEADER,
};
pub use session::{HistoryRow, Monitor, Plan, Session, Source, StepOutcome};
