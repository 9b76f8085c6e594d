mod common;

use std::process::Command;

use pass_cli::config::{Grid, RunConfig};
use pass_cli::report::{parse_results, report};
use pass_cli::simulate::simulate;
use pass_cli::stream::{parse_stream_csv, run_stream, StreamSettings};
use pass_core::monitor::ChartId;
use pass_core::simlab::{ExperimentConfig, RESULTS_HEADER};

fn small_run() -> RunConfig {
    RunConfig {
        experiment: ExperimentConfig {
            charts: vec![ChartId::V],
            arl0_target: 50.0,
            calibration_runs: 100,
            n_replications: 5,
            phase1_batches: 10,
            ..Default::default()
        },
        grid: Some(Grid {
            delta: Some(vec![2.0, 3.0]),
            ..Default::default()
        }),
        record_history: true,
        ..Default::default()
    }
}

#[test]
fn simulate_is_reproducible_and_resumable() {
    let cfg = small_run();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = simulate(&cfg, a.path()).unwrap();
    assert_eq!((ra.cells, ra.computed, ra.failed), (2, 2, 0));
    simulate(&cfg, b.path()).unwrap();
    let res_a = std::fs::read(a.path().join("results.csv")).unwrap();
    assert_eq!(res_a, std::fs::read(b.path().join("results.csv")).unwrap());
    let rows = parse_results(std::str::from_utf8(&res_a).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].delta, 3.0);

    let again = simulate(&cfg, a.path()).unwrap();
    assert_eq!((again.computed, again.resumed), (0, 2));
    assert_eq!(res_a, std::fs::read(a.path().join("results.csv")).unwrap());

    let cells: Vec<_> = std::fs::read_dir(a.path().join("cells"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(cells.iter().filter(|n| n.ends_with(".json")).count(), 2);
    assert_eq!(cells.iter().filter(|n| n.ends_with("_history.csv")).count(), 2);

    let out = tempfile::tempdir().unwrap();
    let table = report(&a.path().join("results.csv"), out.path()).unwrap();
    assert!(table.contains("branin"));
    let series = std::fs::read_to_string(out.path().join("series_branin.csv")).unwrap();
    assert_eq!(series.lines().count(), 3);
}

#[test]
fn empty_grid_writes_header_only() {
    let mut cfg = small_run();
    cfg.grid = Some(Grid {
        epsilon: Some(vec![]),
        ..Default::default()
    });
    let dir = tempfile::tempdir().unwrap();
    let r = simulate(&cfg, dir.path()).unwrap();
    assert_eq!(r.cells, 0);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("results.csv")).unwrap(),
        format!("{RESULTS_HEADER}\n")
    );
}

#[test]
fn failing_cell_is_reported_and_others_continue() {
    let mut cfg = small_run();
    // a turbulence wider than the grid cells is rejected when the baseline is built
    cfg.experiment.turbulence = Some(50.0);
    let dir = tempfile::tempdir().unwrap();
    let r = simulate(&cfg, dir.path()).unwrap();
    assert_eq!(r.failed, 2);
    let errors = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 3);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("results.csv")).unwrap(),
        format!("{RESULTS_HEADER}\n")
    );
}

fn quick_stream() -> StreamSettings {
    StreamSettings {
        baseline_batches: 30,
        replays: 200,
        ..Default::default()
    }
}

#[test]
fn stream_detects_local_shift_within_budget() {
    let text = common::synthetic_stream(200, &[40, 25, 6], 120, 1.5, 3);
    let data = parse_stream_csv(&text).unwrap();
    let s = quick_stream();
    let out = run_stream(&data, &s, None).unwrap();
    assert_eq!(out.log.len(), 170);
    for row in &out.log {
        assert_eq!(row.revealed, row.batch_size.min(s.budget));
    }
    let before = out.alarms.iter().filter(|(t, _)| *t < 120).count();
    let after = out.alarms.iter().filter(|(t, _)| *t >= 120).count();
    assert!(after > before, "alarms before {before}, after {after}");

    // reusing the bootstrapped limits reproduces the run
    let again = run_stream(&data, &s, Some(out.limits.clone())).unwrap();
    assert_eq!(again.chart_log_csv(), out.chart_log_csv());
    assert!(out.chart_log_csv().starts_with("t,batch_size,revealed,A,V,z_A,z_V,ucl_A,ucl_V,alarm\n"));
    assert!(out.history_csv().starts_with("t,x1,x2,y,residual,source\n"));
}

#[test]
fn stream_needs_more_than_the_baseline() {
    let text = common::synthetic_stream(30, &[10], 100, 0.0, 1);
    let data = parse_stream_csv(&text).unwrap();
    assert!(run_stream(&data, &quick_stream(), None).is_err());
}

#[test]
fn binary_reports_line_numbers_and_bad_presets() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "t,x1,y\n1,0.5,1\n1,0.4,oops\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pass"))
        .args(["stream", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = Command::new(env!("CARGO_BIN_EXE_pass"))
        .args(["simulate", "--preset", "nope", "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));
}

#[test]
fn binary_round_trips_a_small_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let mut run = small_run();
    run.grid = Some(Grid {
        delta: Some(vec![3.0]),
        ..Default::default()
    });
    std::fs::write(&cfg, run.to_json()).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_pass"))
        .args(["--parallelism", "1", "simulate", "--seed", "4", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("sim"))
        .output()
        .unwrap();
    assert!(status.status.success());
    let status = Command::new(env!("CARGO_BIN_EXE_pass"))
        .args(["report", "--results"])
        .arg(dir.path().join("sim/results.csv"))
        .arg("--out")
        .arg(dir.path().join("rep"))
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(dir.path().join("rep/summary.txt").exists());
    let manifest = std::fs::read_to_string(dir.path().join("sim/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 4"));
}
