//! Control-limit calibration by Monte Carlo and by bootstrap quantiles.
//!
//! Monte-Carlo calibration keeps a bank of in-control trajectories that are
//! extended lazily. For a scalar score `s_t` (an EWMA value or a ratio of
//! EWMA values to base limits) a run alarms at threshold `u` at the first
//! step whose running maximum of `s` exceeds `u`. Each run stores only its
//! record values, so the run length for any threshold is a binary search and
//! only runs that have not yet exceeded `u` need to be simulated further.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream, RandomStream};

use super::ewma::{ChartPair, EwmaChart};

/// Produces one in-control step at a time for a single run.
pub trait TrajectorySource: Send {
    /// Values observed at the next step (for example one EWMA value per chart).
    fn next_values(&mut self) -> Result<Vec<f64>>;
}

struct Run<S> {
    source: S,
    width: usize,
    history: Vec<f64>,
}

impl<S: TrajectorySource> Run<S> {
    fn steps(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.history.len() / self.width
        }
    }

    fn extend(&mut self) -> Result<()> {
        let v = self.source.next_values()?;
        if self.width == 0 {
            self.width = v.len();
        } else if v.len() != self.width {
            return Err(Error::DimensionMismatch {
                expected: self.width,
                got: v.len(),
            });
        }
        self.history.extend_from_slice(&v);
        Ok(())
    }

    fn step(&self, i: usize) -> &[f64] {
        &self.history[i * self.width..(i + 1) * self.width]
    }
}

/// In-control trajectories shared by every calibration on the same source.
pub struct TrajectoryBank<S> {
    runs: Vec<Run<S>>,
    horizon: u64,
}

impl<S: TrajectorySource> TrajectoryBank<S> {
    pub fn new(sources: Vec<S>, horizon: u64) -> Result<Self> {
        if sources.is_empty() || horizon == 0 {
            return Err(invalid(
                "trajectory bank needs at least one run and a positive horizon",
            ));
        }
        Ok(TrajectoryBank {
            runs: sources
                .into_iter()
                .map(|source| Run {
                    source,
                    width: 0,
                    history: Vec::new(),
                })
                .collect(),
            horizon,
        })
    }

    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// Total simulated steps across runs.
    pub fn simulated_steps(&self) -> usize {
        self.runs.iter().map(Run::steps).sum()
    }
}

/// Running-maximum records of one run under a fixed score.
#[derive(Default)]
struct Records {
    times: Vec<u64>,
    values: Vec<f64>,
    scanned: usize,
}

impl Records {
    fn scan<S: TrajectorySource, F: Fn(&[f64]) -> f64>(&mut self, run: &Run<S>, score: &F) {
        while self.scanned < run.steps() {
            let s = score(run.step(self.scanned));
            if self.values.last().is_none_or(|m| s > *m) {
                self.times.push(self.scanned as u64 + 1);
                self.values.push(s);
            }
            self.scanned += 1;
        }
    }

    fn first_exceed(&self, u: f64) -> Option<u64> {
        let i = self.values.partition_point(|v| *v <= u);
        self.times.get(i).copied()
    }
}

fn run_length<S: TrajectorySource, F: Fn(&[f64]) -> f64>(
    run: &mut Run<S>,
    rec: &mut Records,
    score: &F,
    u: f64,
    horizon: u64,
) -> Result<(u64, bool)> {
    rec.scan(run, score);
    if let Some(t) = rec.first_exceed(u) {
        return Ok((t, false));
    }
    while (run.steps() as u64) < horizon {
        run.extend()?;
        rec.scan(run, score);
        if let Some(t) = rec.first_exceed(u) {
            return Ok((t, false));
        }
    }
    Ok((horizon, true))
}

/// Average run length at a threshold; censored runs count as the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArlEstimate {
    pub threshold: f64,
    pub arl: f64,
    pub censored: usize,
    pub runs: usize,
}

/// Evaluates run lengths of the bank under one scalar score.
pub struct ScoredBank<'a, S, F> {
    bank: &'a mut TrajectoryBank<S>,
    records: Vec<Records>,
    score: F,
}

impl<'a, S, F> ScoredBank<'a, S, F>
where
    S: TrajectorySource,
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(bank: &'a mut TrajectoryBank<S>, score: F) -> Self {
        let records = bank.runs.iter().map(|_| Records::default()).collect();
        ScoredBank {
            bank,
            records,
            score,
        }
    }

    pub fn arl(&mut self, threshold: f64) -> Result<ArlEstimate> {
        let horizon = self.bank.horizon;
        let score = &self.score;
        let lengths: Vec<Result<(u64, bool)>> = self
            .bank
            .runs
            .par_iter_mut()
            .zip(self.records.par_iter_mut())
            .map(|(run, rec)| run_length(run, rec, score, threshold, horizon))
            .collect();
        let mut sum = 0.0;
        let mut censored = 0;
        for r in lengths {
            let (len, cens) = r?;
            sum += len as f64;
            censored += cens as usize;
        }
        let runs = self.records.len();
        Ok(ArlEstimate {
            threshold,
            arl: sum / runs as f64,
            censored,
            runs,
        })
    }

    /// Run lengths per run at a threshold, in bank order.
    pub fn run_lengths(&mut self, threshold: f64) -> Result<Vec<(u64, bool)>> {
        let horizon = self.bank.horizon;
        let score = &self.score;
        self.bank
            .runs
            .par_iter_mut()
            .zip(self.records.par_iter_mut())
            .map(|(run, rec)| run_length(run, rec, score, threshold, horizon))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Bracket growth factor per step.
    pub growth: f64,
    pub max_bracket_steps: usize,
    /// Stop once `|ARL - target| <= rel_tol * target`.
    pub rel_tol: f64,
    pub max_bisections: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            growth: 2.0,
            max_bracket_steps: 60,
            rel_tol: 0.01,
            max_bisections: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub threshold: f64,
    pub estimate: ArlEstimate,
    pub trace: Vec<String>,
}

/// Finds a threshold whose bank ARL is close to `target`.
///
/// The bracket is grown (or shrunk) geometrically from `initial`, then bisected.
pub fn calibrate<S, F>(
    scored: &mut ScoredBank<'_, S, F>,
    target: f64,
    initial: f64,
    opts: &CalibrationOptions,
) -> Result<CalibrationOutcome>
where
    S: TrajectorySource,
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(target >= 1.0) {
        return Err(invalid(format!("target ARL must be >= 1, got {target}")));
    }
    let mut trace = Vec::new();
    let log = |e: &ArlEstimate, trace: &mut Vec<String>| {
        trace.push(format!(
            "threshold={:.6e} arl={:.3} censored={}/{}",
            e.threshold, e.arl, e.censored, e.runs
        ))
    };
    let u0 = if initial.is_finite() && initial > 0.0 {
        initial
    } else {
        1.0
    };
    let e0 = scored.arl(u0)?;
    log(&e0, &mut trace);
    let (mut lo, mut hi) = if e0.arl < target {
        let mut lo = e0;
        let mut found = None;
        for _ in 0..opts.max_bracket_steps {
            let e = scored.arl(lo.threshold * opts.growth)?;
            log(&e, &mut trace);
            if e.arl >= target {
                found = Some(e);
                break;
            }
            lo = e;
        }
        match found {
            Some(hi) => (lo, hi),
            None => return Err(bracket_failure(trace)),
        }
    } else {
        let mut hi = e0;
        let mut found = None;
        for _ in 0..opts.max_bracket_steps {
            let e = scored.arl(hi.threshold / opts.growth)?;
            log(&e, &mut trace);
            if e.arl < target {
                found = Some(e);
                break;
            }
            hi = e;
        }
        match found {
            Some(lo) => (lo, hi),
            None => return Err(bracket_failure(trace)),
        }
    };
    let closer = |a: ArlEstimate, b: ArlEstimate| {
        if (a.arl - target).abs() <= (b.arl - target).abs() {
            a
        } else {
            b
        }
    };
    let mut best = closer(lo, hi);
    for _ in 0..opts.max_bisections {
        if (best.arl - target).abs() <= opts.rel_tol * target {
            break;
        }
        let mid = 0.5 * (lo.threshold + hi.threshold);
        if mid <= lo.threshold || mid >= hi.threshold {
            break;
        }
        let e = scored.arl(mid)?;
        log(&e, &mut trace);
        if e.arl < target {
            lo = e;
        } else {
            hi = e;
        }
        best = closer(best, e);
    }
    Ok(CalibrationOutcome {
        threshold: best.threshold,
        estimate: best,
        trace,
    })
}

fn bracket_failure(trace: Vec<String>) -> Error {
    Error::Calibration {
        reason: "no threshold bracket found for the target ARL".into(),
        trace,
    }
}

/// A single chart driven by an in-control statistic generator.
pub struct GeneratorSource<G> {
    chart: EwmaChart,
    generator: G,
    rng: RandomStream,
}

impl<G> GeneratorSource<G> {
    pub fn new(chart: EwmaChart, generator: G, rng: RandomStream) -> Self {
        GeneratorSource {
            chart,
            generator,
            rng,
        }
    }
}

impl<G> TrajectorySource for GeneratorSource<G>
where
    G: FnMut(&mut RandomStream) -> Result<f64> + Send,
{
    fn next_values(&mut self) -> Result<Vec<f64>> {
        let theta = (self.generator)(&mut self.rng)?;
        Ok(vec![self.chart.update(theta)])
    }
}

/// Calibrates a constant UCL for `template` so its in-control ARL is near
/// `target_arl0`. `generator` draws one in-control statistic per call.
pub fn calibrate_ucl_mc<G>(
    generator: G,
    template: &EwmaChart,
    target_arl0: f64,
    n_runs: usize,
    horizon: u64,
    rng: &mut RandomStream,
) -> Result<CalibrationOutcome>
where
    G: FnMut(&mut RandomStream) -> Result<f64> + Send + Clone,
{
    if n_runs < 100 {
        return Err(invalid(format!(
            "calibration needs n_runs >= 100, got {n_runs}"
        )));
    }
    if (horizon as f64) < 10.0 * target_arl0 {
        return Err(invalid(format!(
            "horizon {horizon} is shorter than 10 x target ARL {target_arl0}"
        )));
    }
    let mut chart = template.clone();
    chart.reset();
    let sources = (0..n_runs)
        .map(|_| GeneratorSource {
            chart: chart.clone(),
            generator: generator.clone(),
            rng: stream(rng.random()),
        })
        .collect();
    let mut bank = TrajectoryBank::new(sources, horizon)?;
    let mut scored = ScoredBank::new(&mut bank, |v: &[f64]| v[0]);
    let initial = if template.ucl > 0.0 {
        template.ucl
    } else {
        1.0
    };
    calibrate(
        &mut scored,
        target_arl0,
        initial,
        &CalibrationOptions::default(),
    )
}

/// UCLs for a chart pair under the OR rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointCalibration {
    pub ucl_a: Option<f64>,
    pub ucl_v: Option<f64>,
    /// Common multiplier applied to the individually calibrated limits.
    pub multiplier: f64,
    pub estimate: ArlEstimate,
    pub trace: Vec<String>,
}

/// Calibrates the charts present in `pair`. Each chart is first calibrated
/// alone to `target`, then a shared multiplier on both limits is bisected so
/// that the OR-rule ARL hits `target`. The bank must yield `[z_A, z_V]`
/// (missing charts may report 0).
pub fn calibrate_pair<S: TrajectorySource>(
    bank: &mut TrajectoryBank<S>,
    pair: &ChartPair,
    target: f64,
    initial: (f64, f64),
    opts: &CalibrationOptions,
) -> Result<JointCalibration> {
    let mut trace = Vec::new();
    let mut single = |idx: usize, init: f64, trace: &mut Vec<String>| -> Result<f64> {
        let mut scored = ScoredBank::new(bank, move |v: &[f64]| v[idx]);
        let out = calibrate(&mut scored, target, init, opts)?;
        trace.extend(out.trace.iter().map(|l| format!("chart {idx}: {l}")));
        Ok(out.threshold)
    };
    let ua = match pair.a {
        Some(_) => Some(single(0, initial.0, &mut trace)?),
        None => None,
    };
    let uv = match pair.v {
        Some(_) => Some(single(1, initial.1, &mut trace)?),
        None => None,
    };
    match (ua, uv) {
        (Some(a), Some(v)) => {
            let mut scored = ScoredBank::new(bank, move |z: &[f64]| (z[0] / a).max(z[1] / v));
            let out = calibrate(&mut scored, target, 1.0, opts)?;
            trace.extend(out.trace.iter().map(|l| format!("joint: {l}")));
            Ok(JointCalibration {
                ucl_a: Some(a * out.threshold),
                ucl_v: Some(v * out.threshold),
                multiplier: out.threshold,
                estimate: out.estimate,
                trace,
            })
        }
        (a, v) => {
            let idx = if a.is_some() { 0 } else { 1 };
            let u = a.or(v).ok_or_else(|| invalid("chart pair has no charts"))?;
            let estimate = ScoredBank::new(bank, move |z: &[f64]| z[idx]).arl(u)?;
            Ok(JointCalibration {
                ucl_a: a,
                ucl_v: v,
                multiplier: 1.0,
                estimate,
                trace,
            })
        }
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (`h = (n - 1) q`).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("quantile of an empty vector"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("quantile level {q} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// UCL as the `quantile` level of bootstrap chart maxima.
pub fn calibrate_ucl_bootstrap(baseline_stats: &[f64], quantile_level: f64) -> Result<f64> {
    if !(quantile_level > 0.0 && quantile_level < 1.0) {
        return Err(invalid(format!(
            "quantile must lie in (0, 1), got {quantile_level}"
        )));
    }
    quantile(baseline_stats, quantile_level)
}

/// Target and limit for one chart from resampled in-control statistic
/// sequences: the target is the pooled mean and the limit is the
/// `quantile_level` quantile of the per-sequence EWMA maximum.
pub fn bootstrap_limits(
    sequences: &[Vec<f64>],
    lambda: f64,
    quantile_level: f64,
) -> Result<(f64, f64)> {
    let n: usize = sequences.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(invalid("bootstrap needs at least one statistic"));
    }
    let theta0 = sequences.iter().flatten().sum::<f64>() / n as f64;
    let template = EwmaChart::log_variance(lambda, theta0, f64::INFINITY)?;
    let maxima: Vec<f64> = sequences
        .iter()
        .map(|seq| {
            let mut chart = template.clone();
            seq.iter().fold(0.0f64, |m, t| m.max(chart.update(*t)))
        })
        .collect();
    Ok((theta0, calibrate_ucl_bootstrap(&maxima, quantile_level)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Counter {
        t: u64,
    }

    impl TrajectorySource for Counter {
        fn next_values(&mut self) -> Result<Vec<f64>> {
            self.t += 1;
            Ok(vec![self.t as f64])
        }
    }

    #[test]
    fn deterministic_ramp_run_lengths() {
        // score t at step t: threshold u alarms at floor(u) + 1
        let mut bank = TrajectoryBank::new(vec![Counter { t: 0 }, Counter { t: 0 }], 50).unwrap();
        let mut scored = ScoredBank::new(&mut bank, |v: &[f64]| v[0]);
        assert_eq!(scored.arl(3.5).unwrap().arl, 4.0);
        assert_eq!(scored.arl(0.5).unwrap().arl, 1.0);
        let e = scored.arl(100.0).unwrap();
        assert_eq!((e.arl, e.censored), (50.0, 2));
        let out = calibrate(&mut scored, 20.0, 1.0, &CalibrationOptions::default()).unwrap();
        assert!((out.estimate.arl - 20.0).abs() <= 0.2);
    }

    #[test]
    fn bootstrap_quantile_interpolates() {
        assert_eq!(calibrate_ucl_bootstrap(&[2.0; 7], 0.3).unwrap(), 2.0);
        assert_eq!(quantile(&[0.0, 1.0, 2.0, 3.0], 0.5).unwrap(), 1.5);
        assert!(calibrate_ucl_bootstrap(&[], 0.5).is_err());
        assert!(calibrate_ucl_bootstrap(&[1.0], 1.0).is_err());
    }

    #[test]
    fn bootstrap_limits_of_constant_sequences() {
        let seqs = vec![vec![1.0, 1.0], vec![1.0, 3.0]];
        let (t0, ucl) = bootstrap_limits(&seqs, 0.5, 0.5).unwrap();
        assert!((t0 - 1.5).abs() < 1e-12);
        // maxima are 0 and 0.75
        assert!((ucl - 0.375).abs() < 1e-12);
    }

    #[test]
    fn unreachable_target_reports_trace() {
        struct Zero;
        impl TrajectorySource for Zero {
            fn next_values(&mut self) -> Result<Vec<f64>> {
                Ok(vec![0.0])
            }
        }
        // never alarms, so ARL is always the horizon
        let mut bank = TrajectoryBank::new(vec![Zero], 10).unwrap();
        let mut scored = ScoredBank::new(&mut bank, |v: &[f64]| v[0]);
        match calibrate(&mut scored, 5.0, 1.0, &CalibrationOptions::default()) {
            Err(Error::Calibration { trace, .. }) => assert_eq!(trace.len(), 61),
            other => panic!("unexpected {other:?}"),
        }
    }
}
