//! Budgeted monitoring of a recorded stream: inputs arrive in batches, and
//! only the labels chosen by the sampler are read.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use pass_core::baselines::{PolicyKind, SamplingPolicy};
use pass_core::exploit::ResidualHistory;
use pass_core::explore::{exploration_sample, stamp_initial, GridSpec, LastVisitMap};
use pass_core::monitor::{bootstrap_limits, top_r_mean, ChartId, EwmaChart};
use pass_core::predictor::{fit, FeatureKind, FeatureMap, FittedModel};
use pass_core::rng::derived_stream;
use pass_core::simlab::ModelSpec;
use pass_core::{Dataset, Domain, LabeledSample, Point, RandomStream};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSettings {
    /// Labels per batch (`M`).
    pub budget: usize,
    pub epsilon: f64,
    pub lambda: f64,
    /// Top-r size; `None` uses `budget / 2`.
    pub r: Option<usize>,
    pub charts: Vec<ChartId>,
    /// Exploration bins per axis.
    pub bins: usize,
    /// Leading batches treated as fully labeled reference data.
    pub baseline_batches: usize,
    pub replays: usize,
    pub quantile: f64,
    /// Exploitation perturbation scale as a fraction of each axis range.
    pub turbulence: f64,
    /// Model fit on the baseline when the data carries no predictions.
    /// `kind: None` means identity features.
    pub model: ModelSpec,
    pub seed: u64,
}

impl Default for StreamSettings {
    fn default() -> Self {
        StreamSettings {
            budget: 8,
            epsilon: 0.5,
            lambda: 0.2,
            r: None,
            charts: vec![ChartId::A],
            bins: 4,
            baseline_batches: 50,
            replays: 1000,
            quantile: 0.995,
            turbulence: 0.05,
            model: ModelSpec::default(),
            seed: 0,
        }
    }
}

impl StreamSettings {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.budget >= 2, "stream budget must be at least 2");
        ensure!((0.0..=1.0).contains(&self.epsilon), "stream epsilon outside [0, 1]");
        ensure!(self.lambda > 0.0 && self.lambda <= 1.0, "stream lambda must lie in (0, 1]");
        let r = self.top_r();
        ensure!(r >= 1 && r <= self.budget, "stream r = {r} must lie in 1..={}", self.budget);
        ensure!(!self.charts.is_empty(), "stream needs at least one chart");
        ensure!(self.bins >= 1, "stream bins must be positive");
        ensure!(self.baseline_batches >= 2, "stream needs at least two baseline batches");
        ensure!(self.replays >= 2, "stream replays must be at least 2");
        ensure!(self.quantile > 0.0 && self.quantile < 1.0, "stream quantile must lie in (0, 1)");
        ensure!(self.turbulence > 0.0, "stream turbulence must be positive");
        Ok(())
    }

    pub fn top_r(&self) -> usize {
        self.r.unwrap_or(self.budget / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    /// 1-based line in the input file.
    pub line: usize,
    pub t: u64,
    pub x: Point,
    pub y: f64,
    pub prediction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamData {
    pub dim: usize,
    pub has_prediction: bool,
    pub records: Vec<StreamRecord>,
}

/// Parses `t,x1..xd,y[,prediction]`. Rows must be sorted by `t`; rows that
/// share `t` form one batch.
pub fn parse_stream_csv(text: &str) -> Result<StreamData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .context("line 1: unreadable header")?
        .iter()
        .map(str::to_string)
        .collect();
    let has_prediction = header.last().map(String::as_str) == Some("prediction");
    let ncols = header.len();
    let dim = ncols.saturating_sub(2 + has_prediction as usize);
    let mut expected = vec!["t".to_string()];
    expected.extend((1..=dim).map(|j| format!("x{j}")));
    expected.push("y".into());
    if has_prediction {
        expected.push("prediction".into());
    }
    if dim == 0 || header != expected {
        bail!(
            "line 1: header must be t,x1..xd,y[,prediction], got {}",
            header.join(",")
        );
    }
    let mut records = Vec::new();
    let mut last_t = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            anyhow!("line {line}: {e}")
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != ncols {
            bail!("line {line}: expected {ncols} fields, got {}", rec.len());
        }
        let t: u64 = rec[0]
            .parse()
            .map_err(|_| anyhow!("line {line}: t = {:?} is not a nonnegative integer", &rec[0]))?;
        if t < last_t {
            bail!("line {line}: t = {t} precedes t = {last_t}");
        }
        last_t = t;
        let mut vals = Vec::with_capacity(ncols - 1);
        for (j, field) in rec.iter().enumerate().skip(1) {
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| anyhow!("line {line}: column {} = {field:?} is not a finite number", header[j]))?;
            vals.push(v);
        }
        records.push(StreamRecord {
            line,
            t,
            x: Point(vals[..dim].to_vec()),
            y: vals[dim],
            prediction: has_prediction.then(|| vals[dim + 1]),
        });
    }
    Ok(StreamData {
        dim,
        has_prediction,
        records,
    })
}

/// Control limits read from or written to `calibration.json`. Extra fields
/// such as those of a simulation artifact are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamLimits {
    #[serde(rename = "theta0_A")]
    pub theta0_a: f64,
    #[serde(rename = "theta0_V")]
    pub theta0_v: f64,
    #[serde(rename = "ucl_A")]
    pub ucl_a: Option<f64>,
    #[serde(rename = "ucl_V")]
    pub ucl_v: Option<f64>,
    #[serde(default)]
    pub method: String,
    #[serde(default)]
    pub replays: usize,
    #[serde(default)]
    pub quantile: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pick {
    Exploit,
    Explore,
    /// Batch no larger than the budget, or exploration fell back to uniform.
    Fill,
}

impl Pick {
    pub fn name(self) -> &'static str {
        match self {
            Pick::Exploit => "exploit",
            Pick::Explore => "explore",
            Pick::Fill => "fill",
        }
    }
}

#[derive(Clone)]
struct Selector {
    policy: SamplingPolicy,
    budget: usize,
    domain: Domain,
    grid: GridSpec,
    scales: Vec<f64>,
    history: ResidualHistory,
    visits: LastVisitMap,
    t: u64,
}

fn nearest(p: &Point, xs: &[Point], taken: &[bool], domain: &Domain) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in xs.iter().enumerate() {
        if taken[i] {
            continue;
        }
        let d: f64 = (0..domain.dim())
            .map(|j| ((x.0[j] - p.0[j]) / domain.width(j)).powi(2))
            .sum();
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

impl Selector {
    /// Advances time and picks `min(budget, xs.len())` distinct rows.
    fn select(&mut self, xs: &[Point], rng: &mut RandomStream) -> Result<Vec<(usize, Pick)>> {
        self.t += 1;
        let n = xs.len();
        let mut picks = Vec::with_capacity(self.budget.min(n));
        if n <= self.budget {
            picks.extend((0..n).map(|i| (i, Pick::Fill)));
        } else {
            let (m_x, m_e) = self.policy.split(self.budget);
            let mut taken = vec![false; n];
            for p in self.history.sample_scaled(m_x, &self.scales, &self.domain, rng)? {
                let i = nearest(&p, xs, &taken, &self.domain).expect("n > budget");
                taken[i] = true;
                picks.push((i, Pick::Exploit));
            }
            let exploited: Vec<Point> = picks.iter().map(|(i, _)| xs[*i].clone()).collect();
            let proposals =
                exploration_sample(&self.grid, &mut self.visits, self.t, m_e, &exploited, rng)
                    .unwrap_or_default();
            for p in &proposals {
                let i = nearest(p, xs, &taken, &self.domain).expect("n > budget");
                taken[i] = true;
                picks.push((i, Pick::Explore));
            }
            while picks.len() < self.budget {
                let free: Vec<usize> = (0..n).filter(|i| !taken[*i]).collect();
                let i = free[rng.random_range(0..free.len())];
                taken[i] = true;
                picks.push((i, Pick::Fill));
            }
        }
        for (i, _) in &picks {
            let mut x = xs[*i].clone();
            self.domain.clamp(&mut x);
            let cell = self.grid.cell_of(&x)?;
            self.visits.stamp(cell, self.t)?;
        }
        Ok(picks)
    }
}

/// Labels of one batch; each can be read once.
pub struct LabelOracle {
    labels: Vec<Option<f64>>,
    revealed: usize,
}

impl LabelOracle {
    pub fn new(labels: Vec<f64>) -> Self {
        LabelOracle {
            labels: labels.into_iter().map(Some).collect(),
            revealed: 0,
        }
    }

    pub fn reveal(&mut self, i: usize) -> Result<f64> {
        let y = self
            .labels
            .get_mut(i)
            .ok_or_else(|| anyhow!("row {i} outside the batch"))?
            .take()
            .ok_or_else(|| anyhow!("label of row {i} requested twice"))?;
        self.revealed += 1;
        Ok(y)
    }

    pub fn revealed(&self) -> usize {
        self.revealed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartLogRow {
    pub t: u64,
    pub batch_size: usize,
    pub revealed: usize,
    pub a: Option<f64>,
    pub v: Option<f64>,
    pub z_a: Option<f64>,
    pub z_v: Option<f64>,
    pub alarm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevealedRow {
    pub t: u64,
    pub x: Point,
    pub y: f64,
    pub residual: f64,
    pub pick: Pick,
}

#[derive(Debug, Clone)]
pub struct StreamOutcome {
    pub dim: usize,
    pub limits: StreamLimits,
    /// Whether the limits were bootstrapped in this run.
    pub bootstrapped: bool,
    pub log: Vec<ChartLogRow>,
    pub alarms: Vec<(u64, ChartId)>,
    pub history: Vec<RevealedRow>,
}

struct Batch<'a> {
    t: u64,
    rows: &'a [StreamRecord],
}

fn batches(records: &[StreamRecord]) -> Vec<Batch<'_>> {
    records
        .chunk_by(|a, b| a.t == b.t)
        .map(|rows| Batch { t: rows[0].t, rows })
        .collect()
}

fn bounding_domain(records: &[StreamRecord], dim: usize) -> Result<Domain> {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for r in records {
        for j in 0..dim {
            lo[j] = lo[j].min(r.x.0[j]);
            hi[j] = hi[j].max(r.x.0[j]);
        }
    }
    for j in 0..dim {
        if hi[j] - lo[j] <= 0.0 {
            lo[j] -= 0.5;
            hi[j] += 0.5;
        }
    }
    Ok(Domain::new(lo, hi)?)
}

fn batch_statistics(res: &[f64], r: usize) -> (Option<f64>, Option<f64>) {
    if res.is_empty() {
        return (None, None);
    }
    let a = top_r_mean(res, r.min(res.len())).ok();
    let v = pass_core::monitor::log_variance(res).ok();
    (a, v)
}

/// Fits or reads predictions, bootstraps limits from the baseline batches
/// unless `limits` is given, and monitors the remaining batches.
pub fn run_stream(
    data: &StreamData,
    settings: &StreamSettings,
    limits: Option<StreamLimits>,
) -> Result<StreamOutcome> {
    settings.validate()?;
    let all = batches(&data.records);
    let l = settings.baseline_batches;
    if all.len() <= l {
        bail!(
            "stream has {} batches; need more than the {l} baseline batches",
            all.len()
        );
    }
    let (base, monitored) = all.split_at(l);
    let domain = bounding_domain(&data.records, data.dim)?;

    let model: Option<FittedModel> = if data.has_prediction {
        None
    } else {
        let mut ds = Dataset::new();
        for b in base {
            for r in b.rows {
                ds.push(LabeledSample {
                    x: r.x.clone(),
                    y: r.y,
                    t: r.t,
                })?;
            }
        }
        let (map, ridge) = match settings.model.kind.unwrap_or(FeatureKind::Identity) {
            FeatureKind::Identity => (FeatureMap::identity(domain.clone()), 0.0),
            FeatureKind::SplineInteractions => (
                FeatureMap::splines(domain.clone(), settings.model.knots, settings.model.degree),
                settings.model.ridge,
            ),
        };
        Some(fit(&ds, map, ridge).context("fitting the baseline model")?)
    };
    let predict = |r: &StreamRecord| -> Result<f64> {
        match (&model, r.prediction) {
            (_, Some(p)) => Ok(p),
            (Some(m), None) => Ok(m.predict(&r.x)?),
            (None, None) => bail!("line {}: missing prediction", r.line),
        }
    };

    let grid = GridSpec::uniform(domain.clone(), settings.bins)?;
    let mut history = ResidualHistory::new();
    let mut base_res: Vec<Vec<f64>> = Vec::with_capacity(l);
    for b in base {
        let mut res = Vec::with_capacity(b.rows.len());
        for r in b.rows {
            let e = r.y - predict(r)?;
            history.push(r.x.clone(), e);
            res.push(e);
        }
        base_res.push(res);
    }
    let mut visits = LastVisitMap::new();
    stamp_initial(&grid, &mut visits, base.iter().flat_map(|b| b.rows.iter().map(|r| &r.x)));
    let initial = Selector {
        policy: SamplingPolicy::new(PolicyKind::Pass, settings.epsilon)?,
        budget: settings.budget,
        scales: (0..data.dim)
            .map(|j| settings.turbulence * domain.width(j))
            .collect(),
        domain,
        grid,
        history,
        visits,
        t: 0,
    };
    let r = settings.top_r();
    let use_a = settings.charts.contains(&ChartId::A);
    let use_v = settings.charts.contains(&ChartId::V);

    let bootstrapped = limits.is_none();
    let limits = match limits {
        Some(lim) => {
            ensure!(!use_a || lim.ucl_a.is_some(), "calibration lacks ucl_A");
            ensure!(!use_v || lim.ucl_v.is_some(), "calibration lacks ucl_V");
            lim
        }
        None => {
            let base_xs: Vec<Vec<Point>> = base
                .iter()
                .map(|b| b.rows.iter().map(|r| r.x.clone()).collect())
                .collect();
            let mut seq_a = Vec::with_capacity(settings.replays);
            let mut seq_v = Vec::with_capacity(settings.replays);
            for rep in 0..settings.replays {
                let mut rng = derived_stream(settings.seed, "bootstrap", rep as u64);
                let mut sel = initial.clone();
                let (mut sa, mut sv) = (Vec::with_capacity(l), Vec::with_capacity(l));
                for _ in 0..l {
                    let j = rng.random_range(0..l);
                    let picks = sel.select(&base_xs[j], &mut rng)?;
                    let res: Vec<f64> = picks.iter().map(|(i, _)| base_res[j][*i]).collect();
                    for (i, _) in &picks {
                        sel.history.push(base_xs[j][*i].clone(), base_res[j][*i]);
                    }
                    let (a, v) = batch_statistics(&res, r);
                    sa.extend(a);
                    sv.extend(v);
                }
                seq_a.push(sa);
                seq_v.push(sv);
            }
            let (theta0_a, ucl_a) = bootstrap_limits(&seq_a, settings.lambda, settings.quantile)?;
            let (theta0_v, ucl_v) = bootstrap_limits(&seq_v, settings.lambda, settings.quantile)?;
            StreamLimits {
                theta0_a,
                theta0_v,
                ucl_a: use_a.then_some(ucl_a),
                ucl_v: use_v.then_some(ucl_v),
                method: "bootstrap".into(),
                replays: settings.replays,
                quantile: Some(settings.quantile),
            }
        }
    };

    let mut chart_a = match limits.ucl_a.filter(|_| use_a) {
        Some(u) => Some(EwmaChart::top_r(settings.lambda, limits.theta0_a, u, r)?),
        None => None,
    };
    let mut chart_v = match limits.ucl_v.filter(|_| use_v) {
        Some(u) => Some(EwmaChart::log_variance(settings.lambda, limits.theta0_v, u)?),
        None => None,
    };

    let mut sel = initial;
    let mut rng = derived_stream(settings.seed, "stream", 0);
    let mut log = Vec::with_capacity(monitored.len());
    let mut alarms = Vec::new();
    let mut revealed_rows = Vec::new();
    for b in monitored {
        let xs: Vec<Point> = b.rows.iter().map(|r| r.x.clone()).collect();
        let mut oracle = LabelOracle::new(b.rows.iter().map(|r| r.y).collect());
        let picks = sel.select(&xs, &mut rng)?;
        let mut res = Vec::with_capacity(picks.len());
        for (i, pick) in &picks {
            let y = oracle.reveal(*i)?;
            let e = y - predict(&b.rows[*i])?;
            sel.history.push(xs[*i].clone(), e);
            res.push(e);
            revealed_rows.push(RevealedRow {
                t: b.t,
                x: xs[*i].clone(),
                y,
                residual: e,
                pick: *pick,
            });
        }
        let expected = settings.budget.min(b.rows.len());
        ensure!(
            oracle.revealed() == expected,
            "batch t = {}: revealed {} labels, expected {expected}",
            b.t,
            oracle.revealed()
        );
        let (a, v) = batch_statistics(&res, r);
        let mut z_a = None;
        let mut z_v = None;
        let mut fired = Vec::new();
        if let (Some(c), Some(theta)) = (chart_a.as_mut(), a) {
            z_a = Some(c.update(theta));
            if c.exceeds() {
                fired.push(ChartId::A);
            }
        }
        if let (Some(c), Some(theta)) = (chart_v.as_mut(), v) {
            z_v = Some(c.update(theta));
            if c.exceeds() {
                fired.push(ChartId::V);
            }
        }
        let alarm = !fired.is_empty();
        if alarm {
            log::info!("alarm at t = {} ({fired:?})", b.t);
            alarms.extend(fired.into_iter().map(|c| (b.t, c)));
            chart_a.iter_mut().chain(chart_v.iter_mut()).for_each(EwmaChart::reset);
        }
        log.push(ChartLogRow {
            t: b.t,
            batch_size: b.rows.len(),
            revealed: oracle.revealed(),
            a,
            v,
            z_a,
            z_v,
            alarm,
        });
    }
    Ok(StreamOutcome {
        dim: data.dim,
        limits,
        bootstrapped,
        log,
        alarms,
        history: revealed_rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl StreamOutcome {
    pub fn chart_log_csv(&self) -> String {
        let mut out = String::from("t,batch_size,revealed,A,V,z_A,z_V,ucl_A,ucl_V,alarm\n");
        for r in &self.log {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.batch_size,
                r.revealed,
                opt(r.a),
                opt(r.v),
                opt(r.z_a),
                opt(r.z_v),
                opt(self.limits.ucl_a),
                opt(self.limits.ucl_v),
                r.alarm as u8
            );
        }
        out
    }

    pub fn alarms_csv(&self) -> String {
        let mut out = String::from("t,chart\n");
        for (t, c) in &self.alarms {
            let _ = writeln!(out, "{t},{}", c.name());
        }
        out
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from("t");
        for j in 1..=self.dim {
            let _ = write!(out, ",x{j}");
        }
        out.push_str(",y,residual,source\n");
        for r in &self.history {
            let _ = write!(out, "{}", r.t);
            for v in &r.x.0 {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{},{}", r.y, r.residual, r.pick.name());
        }
        out
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("chart_log.csv"), self.chart_log_csv())?;
        std::fs::write(out.join("alarms.csv"), self.alarms_csv())?;
        std::fs::write(out.join("history.csv"), self.history_csv())?;
        if self.bootstrapped {
            std::fs::write(
                out.join("calibration.json"),
                serde_json::to_string_pretty(&self.limits)?,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_reports_line_numbers() {
        let ok = parse_stream_csv("t,x1,x2,y\n1,0.5,0.5,1.0\n1,0.1,0.2,2\n2,0,0,0\n").unwrap();
        assert_eq!(ok.dim, 2);
        assert!(!ok.has_prediction);
        assert_eq!(ok.records.len(), 3);
        assert_eq!(ok.records[2].line, 4);

        let e = parse_stream_csv("t,x1,y\n1,0.5,1\n1,abc,2\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = parse_stream_csv("t,x1,y\n2,0.5,1\n1,0.5,2\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = parse_stream_csv("t,x1,y\n1,0.5\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(parse_stream_csv("t,x2,y\n").is_err());
        assert!(parse_stream_csv("t,x1,y\n1,0.5,inf\n").is_err());
        let p = parse_stream_csv("t,x1,y,prediction\n1,0.5,1,0.9\n").unwrap();
        assert_eq!(p.records[0].prediction, Some(0.9));
    }

    #[test]
    fn oracle_reveals_once() {
        let mut o = LabelOracle::new(vec![1.0, 2.0]);
        assert_eq!(o.reveal(1).unwrap(), 2.0);
        assert!(o.reveal(1).is_err());
        assert!(o.reveal(5).is_err());
        assert_eq!(o.revealed(), 1);
    }

    #[test]
    fn nearest_skips_taken_rows() {
        let d = Domain::unit(1);
        let xs = vec![Point(vec![0.1]), Point(vec![0.5]), Point(vec![0.9])];
        assert_eq!(nearest(&Point(vec![0.45]), &xs, &[false; 3], &d), Some(1));
        assert_eq!(nearest(&Point(vec![0.45]), &xs, &[false, true, false], &d), Some(0));
        assert_eq!(nearest(&Point(vec![0.45]), &xs, &[true; 3], &d), None);
    }
}
