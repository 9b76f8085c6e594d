//! JSON-in, JSON-out operations for the browser page in `www/`. Errors come
//! back as `{"error": "..."}`.

use std::sync::Arc;

use pass_core::baselines::{random_sample, PolicyKind, SamplingPolicy};
use pass_core::benchmarks::BenchmarkFunction;
use pass_core::drift::{make_drift_region, sample_label, DriftKind, DriftSpec};
use pass_core::exploit::{ResidualHistory, TurbulenceSchedule};
use pass_core::explore::{exploration_sample, GridSpec, LastVisitMap};
use pass_core::monitor::{log_s2_moments, ChartPair, EwmaChart};
use pass_core::predictor::{fit, residuals, FeatureMap};
use pass_core::rng::{derived_stream, stream};
use pass_core::simlab::{Monitor, Plan, Session, Source};
use pass_core::{Dataset, Domain, HyperRect, LabeledSample, Point};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

type Res<T> = std::result::Result<T, String>;

fn wrap<I: for<'de> Deserialize<'de>, O: Serialize>(input: &str, f: impl FnOnce(I) -> Res<O>) -> String {
    let out = serde_json::from_str::<I>(input)
        .map_err(|e| format!("bad input: {e}"))
        .and_then(f);
    match out {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| format!(r#"{{"error":"{e}"}}"#)),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepInput {
    /// `[x1, x2, residual]` on the unit square.
    pub anchors: Vec<[f64; 3]>,
    pub epsilon: f64,
    pub budget: usize,
    pub bins: usize,
    pub h: f64,
    pub t: u64,
    #[serde(default)]
    pub visits: Vec<(u64, u64)>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct StepOutput {
    pub exploit: Vec<[f64; 2]>,
    pub explore: Vec<[f64; 2]>,
    pub visits: Vec<(u64, u64)>,
}

fn xy(p: &Point) -> [f64; 2] {
    [p.0[0], p.0[1]]
}

/// One budget split on the unit square: residual-weighted exploitation
/// around the anchors, then time-weighted exploration of the grid.
pub fn sample_step_impl(inp: StepInput) -> Res<StepOutput> {
    let domain = Domain::unit(2);
    let grid = GridSpec::uniform(domain.clone(), inp.bins).map_err(err)?;
    let policy = SamplingPolicy::new(PolicyKind::Pass, inp.epsilon).map_err(err)?;
    if inp.t == 0 {
        return Err("t must be at least 1".into());
    }
    let mut visits = LastVisitMap::new();
    for (cell, tau) in &inp.visits {
        visits.stamp(*cell, *tau).map_err(err)?;
    }
    let mut hist = ResidualHistory::new();
    for [a, b, e] in &inp.anchors {
        hist.push(Point(vec![*a, *b]), *e);
    }
    let (m_x, m_e) = policy.split(inp.budget);
    let mut rng = stream(inp.seed);
    let exploit = if hist.is_empty() {
        Vec::new()
    } else {
        hist.sample(m_x, inp.h, &domain, &mut rng).map_err(err)?
    };
    let explore =
        exploration_sample(&grid, &mut visits, inp.t, m_e, &exploit, &mut rng).map_err(err)?;
    Ok(StepOutput {
        exploit: exploit.iter().map(xy).collect(),
        explore: explore.iter().map(xy).collect(),
        visits: visits.entries(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceInput {
    pub stats: Vec<f64>,
    pub lambda: f64,
    pub theta0: f64,
    pub ucl: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TraceOutput {
    pub z: Vec<f64>,
    /// 1-based index of the first exceedance.
    pub alarm: Option<usize>,
}

/// Truncated EWMA path of a statistic sequence.
pub fn ewma_trace_impl(inp: TraceInput) -> Res<TraceOutput> {
    let mut c = EwmaChart::log_variance(inp.lambda, inp.theta0, inp.ucl).map_err(err)?;
    let mut alarm = None;
    let z = inp
        .stats
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let z = c.update(*s);
            if alarm.is_none() && c.exceeds() {
                alarm = Some(i + 1);
            }
            z
        })
        .collect();
    Ok(TraceOutput { z, alarm })
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunInput {
    pub policy: PolicyKind,
    pub epsilon: f64,
    pub budget: usize,
    pub delta: f64,
    pub pi_d: f64,
    pub onset: u64,
    pub steps: u64,
    pub lambda: f64,
    /// Steady-state limit in units of the EWMA standard deviation.
    pub limit: f64,
    pub seed: u64,
}

impl Default for RunInput {
    fn default() -> Self {
        RunInput {
            policy: PolicyKind::Pass,
            epsilon: 0.5,
            budget: 20,
            delta: 3.0,
            pi_d: 0.01,
            onset: 20,
            steps: 120,
            lambda: 0.2,
            limit: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RunPoint {
    pub t: u64,
    pub x: [f64; 2],
    pub source: String,
    pub in_region: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RunOutput {
    pub region: HyperRect,
    pub points: Vec<RunPoint>,
    pub z: Vec<f64>,
    pub ucl: f64,
    pub alarm: Option<u64>,
}

/// Short Branin run with an analytic limit on the log-variance chart; the
/// page uses it to show where labels land before and after the drift.
pub fn branin_run_impl(inp: RunInput) -> Res<RunOutput> {
    if inp.steps == 0 || inp.steps > 2000 {
        return Err("steps must lie in 1..=2000".into());
    }
    let f = BenchmarkFunction::Branin;
    let domain = f.domain();
    let mut rng = derived_stream(inp.seed, "design", 0);
    let mut data = Dataset::new();
    for x in random_sample(&domain, 300, &mut rng) {
        let y = sample_label(|p| f.eval(p), None, f.noise(), &x, 0, &mut rng).map_err(err)?;
        data.push(LabeledSample { x, y, t: 0 }).map_err(err)?;
    }
    let model = fit(&data, FeatureMap::splines(domain.clone(), 2, 3), 1e-3).map_err(err)?;
    let e = residuals(&model, &data).map_err(err)?;
    let sigma2 = e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64;
    let (theta0, var_v) = log_s2_moments(sigma2, inp.budget).map_err(err)?;
    let ucl = inp.limit * (var_v * inp.lambda / (2.0 - inp.lambda)).sqrt();

    let grid = GridSpec::uniform(domain.clone(), f.default_bins()).map_err(err)?;
    let plan = Arc::new(Plan {
        function: f,
        grid,
        model,
        policy: SamplingPolicy::new(inp.policy, inp.epsilon).map_err(err)?,
        budget: inp.budget,
        schedule: TurbulenceSchedule::constant(0.75).map_err(err)?,
        anchor_window: None,
        d0: data.iter().map(|s| s.x.clone()).zip(e).collect(),
        domain: domain.clone(),
    });
    let mut rng = derived_stream(inp.seed, "drift", 0);
    let region = make_drift_region(&domain, inp.pi_d, &mut rng).map_err(err)?;
    let drift = DriftSpec {
        kind: DriftKind::Abrupt,
        delta: inp.delta,
        sigma: f.noise().sigma,
        volume_ratio: inp.pi_d,
        onset: inp.onset.max(1),
        ramp_end: inp.onset.max(1),
        region: region.clone(),
    };
    let chart = EwmaChart::log_variance(inp.lambda, theta0, ucl).map_err(err)?;
    let monitor = Monitor::Ewma(ChartPair {
        a: None,
        v: Some(chart),
    });
    let mut s = Session::new(plan, monitor, Some(drift), derived_stream(inp.seed, "run", 0))
        .with_recording();
    let mut z = Vec::new();
    let mut alarm = None;
    while s.t() < inp.steps {
        let out = s.step().map_err(err)?;
        z.push(out.reading.and_then(|r| r.z_v).unwrap_or(0.0));
        if out.alarm {
            alarm = Some(out.t);
            break;
        }
    }
    let points = s
        .take_record()
        .unwrap_or_default()
        .into_iter()
        .map(|r| RunPoint {
            t: r.t,
            x: xy(&r.x),
            source: match r.source {
                Source::Exploit => "exploit",
                Source::Explore => "explore",
                Source::Random => "random",
            }
            .into(),
            in_region: r.in_drift_region,
        })
        .collect();
    Ok(RunOutput {
        region,
        points,
        z,
        ucl,
        alarm,
    })
}

#[wasm_bindgen]
pub fn sample_step(input: &str) -> String {
    wrap(input, sample_step_impl)
}

#[wasm_bindgen]
pub fn ewma_trace(input: &str) -> String {
    wrap(input, ewma_trace_impl)
}

#[wasm_bindgen]
pub fn branin_run(input: &str) -> String {
    wrap(input, branin_run_impl)
}
