use pass_wasm_demo::{branin_run, ewma_trace, sample_step, RunOutput, StepOutput, TraceOutput};

#[test]
fn sample_step_splits_the_budget() {
    let out = sample_step(
        r#"{"anchors": [[0.2, 0.2, 3.0], [0.8, 0.8, 0.1]], "epsilon": 0.25, "budget": 8,
            "bins": 4, "h": 0.05, "t": 1, "seed": 3}"#,
    );
    let s: StepOutput = serde_json::from_str(&out).unwrap();
    assert_eq!(s.exploit.len(), 6);
    assert_eq!(s.explore.len(), 2);
    assert!(s.visits.iter().all(|(_, tau)| *tau == 1));
    let again: StepOutput = serde_json::from_str(&sample_step(
        r#"{"anchors": [[0.2, 0.2, 3.0], [0.8, 0.8, 0.1]], "epsilon": 0.25, "budget": 8,
            "bins": 4, "h": 0.05, "t": 1, "seed": 3}"#,
    ))
    .unwrap();
    assert_eq!(s, again);
}

#[test]
fn ewma_trace_matches_recursion() {
    let out = ewma_trace(r#"{"stats": [1, 3, 0, 5], "lambda": 0.5, "theta0": 1, "ucl": 1.2}"#);
    let t: TraceOutput = serde_json::from_str(&out).unwrap();
    assert_eq!(t.z, vec![0.0, 1.0, 0.5, 2.25]);
    assert_eq!(t.alarm, Some(4));
}

#[test]
fn errors_come_back_as_json() {
    let out = ewma_trace(r#"{"stats": [], "lambda": 2, "theta0": 0, "ucl": 1}"#);
    assert!(out.contains("\"error\""));
    assert!(sample_step("not json").contains("bad input"));
}

#[test]
fn branin_run_detects_a_large_shift() {
    let out = branin_run(r#"{"delta": 10, "pi_d": 0.1, "onset": 5, "steps": 200}"#);
    let r: RunOutput = serde_json::from_str(&out).unwrap();
    let t = r.alarm.expect("alarm");
    assert!(t >= 1);
    assert_eq!(r.z.len() as u64, t);
    assert_eq!(r.points.len() as u64, 20 * t);
}
