use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    batch_mean_score, mewma_step, random_sample, MewmaChart, PolicyKind, SamplingPolicy,
};
use crate::benchmarks::BenchmarkFunction;
use crate::domain::{Domain, Point};
use crate::drift::{sample_label, DriftSpec};
use crate::error::{Error, Result};
use crate::exploit::{update_h, ResidualHistory, TurbulenceSchedule};
use crate::explore::{exploration_sample, stamp_initial, GridSpec, LastVisitMap};
use crate::monitor::{ChartPair, ChartReading, TrajectorySource};
use crate::predictor::FittedModel;
use crate::rng::RandomStream;

/// Immutable ingredients shared by every run of one baseline.
#[derive(Debug)]
pub struct Plan {
    pub function: BenchmarkFunction,
    pub domain: Domain,
    pub grid: GridSpec,
    pub model: FittedModel,
    pub policy: SamplingPolicy,
    pub budget: usize,
    pub schedule: TurbulenceSchedule,
    pub anchor_window: Option<usize>,
    /// Initial design and its residuals under the frozen model.
    pub d0: Vec<(Point, f64)>,
}

impl Plan {
    fn initial_history(&self) -> ResidualHistory {
        let mut h = match self.anchor_window {
            Some(w) => ResidualHistory::with_window(w),
            None => ResidualHistory::new(),
        };
        for (x, e) in &self.d0 {
            h.push(x.clone(), *e);
        }
        h
    }

    fn initial_visits(&self) -> LastVisitMap {
        let mut v = LastVisitMap::new();
        stamp_initial(&self.grid, &mut v, self.d0.iter().map(|(x, _)| x));
        v
    }
}

/// How a point entered the labeled set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Exploit,
    Explore,
    Random,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Exploit => "exploit",
            Source::Explore => "explore",
            Source::Random => "random",
        }
    }
}

/// One labeled query of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub t: u64,
    pub x: Point,
    pub y: f64,
    pub source: Source,
    pub in_drift_region: bool,
}

/// Monitoring scheme attached to a session.
#[derive(Debug, Clone)]
pub enum Monitor {
    None,
    Ewma(ChartPair),
    Mewma { chart: MewmaChart, sigma2: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub t: u64,
    pub alarm: bool,
    pub reading: Option<ChartReading>,
    pub t2: Option<f64>,
    /// The batch had zero residual variance and the charts were not updated.
    pub degenerate: bool,
    pub points: Vec<Point>,
    pub labels: Vec<f64>,
    pub residuals: Vec<f64>,
    pub sources: Vec<Source>,
}

/// State of a single monitoring run following the integrated loop: split the
/// budget, exploit, explore, label, monitor, and append labels while no alarm
/// has been raised.
pub struct Session {
    plan: Arc<Plan>,
    pub monitor: Monitor,
    drift: Option<DriftSpec>,
    history: ResidualHistory,
    visits: LastVisitMap,
    t: u64,
    h: f64,
    rng: RandomStream,
    pub degenerate_steps: usize,
    record: Option<Vec<HistoryRow>>,
}

impl Session {
    pub fn new(
        plan: Arc<Plan>,
        monitor: Monitor,
        drift: Option<DriftSpec>,
        rng: RandomStream,
    ) -> Self {
        let history = plan.initial_history();
        let visits = plan.initial_visits();
        let h = plan.schedule.h0;
        Session {
            plan,
            monitor,
            drift,
            history,
            visits,
            t: 0,
            h,
            rng,
            degenerate_steps: 0,
            record: None,
        }
    }

    pub fn with_recording(mut self) -> Self {
        self.record = Some(Vec::new());
        self
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn take_record(&mut self) -> Option<Vec<HistoryRow>> {
        self.record.take()
    }

    fn propose(&mut self) -> Result<(Vec<Point>, Vec<Source>)> {
        let plan = &*self.plan;
        let m = plan.budget;
        if plan.policy.kind == PolicyKind::Random {
            return Ok((
                random_sample(&plan.domain, m, &mut self.rng),
                vec![Source::Random; m],
            ));
        }
        let (m_x, m_e) = plan.policy.split(m);
        let mut points = self
            .history
            .sample(m_x, self.h, &plan.domain, &mut self.rng)?;
        let explore = exploration_sample(
            &plan.grid,
            &mut self.visits,
            self.t,
            m_e,
            &points,
            &mut self.rng,
        )?;
        let mut sources = vec![Source::Exploit; points.len()];
        sources.extend(std::iter::repeat_n(Source::Explore, explore.len()));
        points.extend(explore);
        Ok((points, sources))
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        self.t += 1;
        let t = self.t;
        let (points, sources) = self.propose()?;
        let plan = Arc::clone(&self.plan);
        let noise = plan.function.noise();
        let mut labels = Vec::with_capacity(points.len());
        let mut residuals = Vec::with_capacity(points.len());
        for x in &points {
            let y = sample_label(
                |p| plan.function.eval(p),
                self.drift.as_ref(),
                noise,
                x,
                t,
                &mut self.rng,
            )?;
            residuals.push(y - plan.model.predict(x)?);
            labels.push(y);
        }
        let mut degenerate = false;
        let mut reading = None;
        let mut t2 = None;
        let alarm = match &mut self.monitor {
            Monitor::None => false,
            Monitor::Ewma(pair) => match pair.step(&residuals) {
                Ok(r) => {
                    let alarm = r.alarm;
                    reading = Some(r);
                    alarm
                }
                Err(Error::DegenerateBatch) => {
                    degenerate = true;
                    false
                }
                Err(e) => return Err(e),
            },
            Monitor::Mewma { chart, sigma2 } => {
                let s = batch_mean_score(&plan.model, &points, &labels, *sigma2)?;
                let (v, alarm) = mewma_step(chart, &s)?;
                t2 = Some(v);
                alarm
            }
        };
        if degenerate {
            self.degenerate_steps += 1;
        }
        if let Some(rec) = self.record.as_mut() {
            for ((x, y), s) in points.iter().zip(&labels).zip(&sources) {
                rec.push(HistoryRow {
                    t,
                    x: x.clone(),
                    y: *y,
                    source: *s,
                    in_drift_region: self.drift.as_ref().is_some_and(|d| d.region.contains(x)),
                });
            }
        }
        if !alarm {
            for (x, e) in points.iter().zip(&residuals) {
                self.history.push(x.clone(), *e);
            }
        }
        self.h = update_h(self.h, &plan.schedule);
        Ok(StepOutcome {
            t,
            alarm,
            reading,
            t2,
            degenerate,
            points,
            labels,
            residuals,
            sources,
        })
    }

    /// Chart values after the last step: `[z_A, z_V]` (zero for absent
    /// charts) or `[T^2]`.
    pub fn chart_values(&self) -> Vec<f64> {
        match &self.monitor {
            Monitor::None => Vec::new(),
            Monitor::Ewma(pair) => vec![
                pair.a.as_ref().map_or(0.0, |c| c.z),
                pair.v.as_ref().map_or(0.0, |c| c.z),
            ],
            Monitor::Mewma { chart, .. } => vec![chart.t2()],
        }
    }
}

impl TrajectorySource for Session {
    fn next_values(&mut self) -> Result<Vec<f64>> {
        self.step()?;
        Ok(self.chart_values())
    }
}
