use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{estimate_cov0, random_sample, score_vector, MewmaChart, PolicyKind};
use crate::domain::{Dataset, LabeledSample, Point};
use crate::drift::sample_label;
use crate::error::{invalid, Result};
use crate::exploit::TurbulenceSchedule;
use crate::monitor::{
    bootstrap_limits, calibrate, calibrate_pair, log_s2_moments, sample_variance, top_r_mean, ArlEstimate,
    CalibrationOptions, ChartId, ChartPair, EwmaChart, ScoredBank, TrajectoryBank,
};
use crate::predictor::{fit, residuals, FittedModel};
use crate::rng::{derived_stream, RandomStream};

use super::config::ExperimentConfig;
use super::session::{Monitor, Plan, Session};

/// In-control MEWMA ingredients.
#[derive(Debug, Clone)]
pub struct MewmaBaseline {
    pub cov0: nalgebra::DMatrix<f64>,
    pub sigma2: f64,
    pub ucl: f64,
}

/// Fitted model, Phase-I targets and calibrated limits for one configuration.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub config: ExperimentConfig,
    pub plan: Arc<Plan>,
    /// RMS residual on a fresh in-control hold-out of the initial design size.
    pub sigma_hat: f64,
    pub theta0_a: f64,
    pub theta0_v: f64,
    pub phase1_sd_a: f64,
    pub phase1_sd_v: f64,
    pub ucl_a: Option<f64>,
    pub ucl_v: Option<f64>,
    pub mewma: Option<MewmaBaseline>,
    /// Bank estimate of the in-control ARL at the returned limits.
    pub calibration_estimate: ArlEstimate,
    pub calibration_trace: Vec<String>,
    /// `monte_carlo`, `monte_carlo_mewma` or `bootstrap`.
    pub method: String,
}

/// Serializable summary of a calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    #[serde(rename = "theta0_A")]
    pub theta0_a: f64,
    #[serde(rename = "theta0_V")]
    pub theta0_v: f64,
    #[serde(rename = "ucl_A")]
    pub ucl_a: Option<f64>,
    #[serde(rename = "ucl_V")]
    pub ucl_v: Option<f64>,
    pub sigma_hat: f64,
    pub method: String,
    pub seed: u64,
    pub n_runs: usize,
    pub lambda: f64,
    pub r: usize,
    pub arl0_target: f64,
    /// Absent for bootstrap limits.
    pub estimated_arl0: Option<f64>,
}

fn labeled(
    config: &ExperimentConfig,
    points: Vec<Point>,
    rng: &mut RandomStream,
) -> Result<Vec<LabeledSample>> {
    let f = config.function;
    points
        .into_iter()
        .map(|x| {
            let y = sample_label(|p| f.eval(p), None, f.noise(), &x, 0, rng)?;
            Ok(LabeledSample { x, y, t: 0 })
        })
        .collect()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

impl Baseline {
    /// Fresh monitor carrying the calibrated limits.
    pub fn monitor(&self) -> Result<Monitor> {
        if let Some(m) = &self.mewma {
            let chart = MewmaChart::new(
                self.config.lambda,
                m.cov0.clone(),
                self.config.budget,
                m.ucl,
            )?;
            return Ok(Monitor::Mewma {
                chart,
                sigma2: m.sigma2,
            });
        }
        Ok(Monitor::Ewma(self.chart_pair(self.ucl_a, self.ucl_v)?))
    }

    fn chart_pair(&self, ucl_a: Option<f64>, ucl_v: Option<f64>) -> Result<ChartPair> {
        let c = &self.config;
        let a = match ucl_a {
            Some(u) if c.charts.contains(&ChartId::A) => {
                Some(EwmaChart::top_r(c.lambda, self.theta0_a, u, c.top_r())?)
            }
            _ => None,
        };
        let v = match ucl_v {
            Some(u) if c.charts.contains(&ChartId::V) => {
                Some(EwmaChart::log_variance(c.lambda, self.theta0_v, u)?)
            }
            _ => None,
        };
        Ok(ChartPair { a, v })
    }

    pub fn session(
        &self,
        drift: Option<crate::drift::DriftSpec>,
        rng: RandomStream,
    ) -> Result<Session> {
        Ok(Session::new(
            Arc::clone(&self.plan),
            self.monitor()?,
            drift,
            rng,
        ))
    }

    pub fn artifact(&self) -> CalibrationArtifact {
        let c = &self.config;
        CalibrationArtifact {
            theta0_a: self.theta0_a,
            theta0_v: self.theta0_v,
            ucl_a: self.ucl_a,
            ucl_v: self.ucl_v,
            sigma_hat: self.sigma_hat,
            method: self.method.clone(),
            seed: c.seed,
            n_runs: c.calibration_runs,
            lambda: c.lambda,
            r: c.top_r(),
            arl0_target: c.arl0_target,
            estimated_arl0: Some(self.calibration_estimate.arl).filter(|a| a.is_finite()),
        }
    }

    pub fn model(&self) -> &FittedModel {
        &self.plan.model
    }
}

struct Prepared {
    baseline: Baseline,
    a_stats: Vec<f64>,
    v_stats: Vec<f64>,
    scores: Vec<Vec<f64>>,
    var_v: f64,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let seed = config.seed;
    let f = config.function;
    let domain = f.domain();
    let map = config.feature_map();
    let d0_size = config.initial_design_size();
    if d0_size < map.feature_dim() {
        return Err(invalid(format!(
            "initial design size {d0_size} is below the feature dimension {}",
            map.feature_dim()
        )));
    }

    let mut rng = derived_stream(seed, "design", 0);
    let design = labeled(config, random_sample(&domain, d0_size, &mut rng), &mut rng)?;
    let data: Dataset = design.into_iter().collect();
    let model = fit(&data, map, config.ridge())?;
    let d0_res = residuals(&model, &data)?;

    let mut rng = derived_stream(seed, "holdout", 0);
    let holdout: Dataset = labeled(config, random_sample(&domain, d0_size, &mut rng), &mut rng)?
        .into_iter()
        .collect();
    let hold_res = residuals(&model, &holdout)?;
    let sigma_hat = (hold_res.iter().map(|e| e * e).sum::<f64>() / hold_res.len() as f64).sqrt();

    let grid = config.grid()?;
    let schedule = TurbulenceSchedule::constant(config.turbulence_h()?)?;
    schedule.check_grid(grid.min_cell_width())?;
    let plan = Arc::new(Plan {
        function: f,
        domain,
        grid,
        model,
        policy: config.sampling_policy()?,
        budget: config.budget,
        schedule,
        anchor_window: config.anchor_window,
        d0: data.iter().map(|s| s.x.clone()).zip(d0_res).collect(),
    });

    // Phase I: in-control steps of the same policy
    let mut phase1 = Session::new(
        Arc::clone(&plan),
        Monitor::None,
        None,
        derived_stream(seed, "phase1", 0),
    );
    let r = config.top_r();
    let mut a_stats = Vec::new();
    let mut s2_stats = Vec::new();
    let mut v_stats = Vec::new();
    let mut scores = Vec::new();
    let score_adaptive = config.policy == PolicyKind::ScoreAdaptive;
    for _ in 0..config.phase1_batches {
        let step = phase1.step()?;
        a_stats.push(top_r_mean(&step.residuals, r)?);
        let s2 = sample_variance(&step.residuals)?;
        if s2 > 0.0 {
            s2_stats.push(s2);
            v_stats.push(s2.ln());
        }
        if score_adaptive {
            for (x, y) in step.points.iter().zip(&step.labels) {
                scores.push(score_vector(&plan.model, x, *y, sigma_hat * sigma_hat)?);
            }
        }
    }
    if s2_stats.len() < 2 {
        return Err(invalid(
            "Phase I produced fewer than two nondegenerate batches",
        ));
    }
    let (theta0_a, sd_a) = mean_sd(&a_stats);
    let sigma2_batch = s2_stats.iter().sum::<f64>() / s2_stats.len() as f64;
    let (theta0_v, var_v) = log_s2_moments(sigma2_batch, config.budget)?;
    let (_, sd_v_emp) = mean_sd(&v_stats);

    let baseline = Baseline {
        config: config.clone(),
        plan: Arc::clone(&plan),
        sigma_hat,
        theta0_a,
        theta0_v,
        phase1_sd_a: sd_a,
        phase1_sd_v: sd_v_emp,
        ucl_a: None,
        ucl_v: None,
        mewma: None,
        calibration_estimate: ArlEstimate {
            threshold: 0.0,
            arl: 0.0,
            censored: 0,
            runs: 0,
        },
        calibration_trace: Vec::new(),
        method: "monte_carlo".into(),
    };
    Ok(Prepared {
        baseline,
        a_stats,
        v_stats,
        scores,
        var_v,
    })
}

/// Draws the initial design, fits the frozen model, estimates Phase-I
/// targets and calibrates control limits to the in-control ARL target.
pub fn build_baseline(config: &ExperimentConfig) -> Result<Baseline> {
    let Prepared {
        mut baseline,
        scores,
        var_v,
        ..
    } = prepare(config)?;
    let plan = Arc::clone(&baseline.plan);
    let seed = config.seed;
    let sd_a = baseline.phase1_sd_a;
    let score_adaptive = config.policy == PolicyKind::ScoreAdaptive;
    let sigma_hat = baseline.sigma_hat;
    let opts = CalibrationOptions {
        growth: config.calibration_growth,
        ..CalibrationOptions::default()
    };
    let horizon = config.calibration_horizon();
    let lam = config.lambda;
    let steady = (lam / (2.0 - lam)).sqrt();

    if score_adaptive {
        let cov0 = estimate_cov0(&scores)?;
        let sigma2 = sigma_hat * sigma_hat;
        let template = MewmaChart::new(lam, cov0.clone(), config.budget, f64::INFINITY)?;
        let sources: Vec<Session> = (0..config.calibration_runs)
            .map(|i| {
                Session::new(
                    Arc::clone(&plan),
                    Monitor::Mewma {
                        chart: template.clone(),
                        sigma2,
                    },
                    None,
                    derived_stream(seed, "calibration", i as u64),
                )
            })
            .collect();
        let mut bank = TrajectoryBank::new(sources, horizon)?;
        let mut scored = ScoredBank::new(&mut bank, |v: &[f64]| v[0]);
        let out = calibrate(&mut scored, config.arl0_target, cov0.nrows() as f64, &opts)?;
        baseline.mewma = Some(MewmaBaseline {
            cov0,
            sigma2,
            ucl: out.threshold,
        });
        baseline.calibration_estimate = out.estimate;
        baseline.calibration_trace = out.trace;
        baseline.method = "monte_carlo_mewma".into();
        return Ok(baseline);
    }

    let template = baseline.chart_pair(Some(f64::INFINITY), Some(f64::INFINITY))?;
    let sources: Vec<Session> = (0..config.calibration_runs)
        .map(|i| {
            Session::new(
                Arc::clone(&plan),
                Monitor::Ewma(template.clone()),
                None,
                derived_stream(seed, "calibration", i as u64),
            )
        })
        .collect();
    let mut bank = TrajectoryBank::new(sources, horizon)?;
    let initial = (3.0 * sd_a.max(1e-12) * steady, 3.0 * var_v.sqrt() * steady);
    let joint = calibrate_pair(&mut bank, &template, config.arl0_target, initial, &opts)?;
    baseline.ucl_a = joint.ucl_a;
    baseline.ucl_v = joint.ucl_v;
    baseline.calibration_estimate = joint.estimate;
    baseline.calibration_trace = joint.trace;
    Ok(baseline)
}

/// Like [`build_baseline`], but limits come from `replays` bootstrap
/// resamples of the Phase-I batches: each chart's limit is the
/// `quantile_level` quantile of its EWMA maximum over a resampled sequence
/// of `phase1_batches` batches.
pub fn build_baseline_bootstrap(
    config: &ExperimentConfig,
    replays: usize,
    quantile_level: f64,
) -> Result<Baseline> {
    if config.policy == PolicyKind::ScoreAdaptive {
        return Err(invalid("bootstrap calibration supports EWMA charts only"));
    }
    if replays < 2 {
        return Err(invalid("bootstrap needs at least two replays"));
    }
    let Prepared {
        mut baseline,
        a_stats,
        v_stats,
        ..
    } = prepare(config)?;
    let len = config.phase1_batches;
    let mut seq_a = Vec::with_capacity(replays);
    let mut seq_v = Vec::with_capacity(replays);
    for b in 0..replays {
        let mut rng = derived_stream(config.seed, "bootstrap", b as u64);
        seq_a.push((0..len).map(|_| a_stats[rng.random_range(0..a_stats.len())]).collect());
        seq_v.push((0..len).map(|_| v_stats[rng.random_range(0..v_stats.len())]).collect());
    }
    let lam = config.lambda;
    if config.charts.contains(&ChartId::A) {
        let (t0, ucl) = bootstrap_limits(&seq_a, lam, quantile_level)?;
        baseline.theta0_a = t0;
        baseline.ucl_a = Some(ucl);
    }
    if config.charts.contains(&ChartId::V) {
        let (t0, ucl) = bootstrap_limits(&seq_v, lam, quantile_level)?;
        baseline.theta0_v = t0;
        baseline.ucl_v = Some(ucl);
    }
    baseline.calibration_estimate = ArlEstimate {
        threshold: f64::NAN,
        arl: f64::NAN,
        censored: 0,
        runs: replays,
    };
    baseline.method = "bootstrap".into();
    Ok(baseline)
}

/// Runs fresh in-control sessions with the calibrated monitor and returns
/// the average run length (runs censored at `horizon` count as `horizon`).
pub fn in_control_arl(
    baseline: &Baseline,
    n_runs: usize,
    horizon: u64,
    key: &str,
) -> Result<ArlEstimate> {
    let seed = baseline.config.seed;
    let lengths: Vec<Result<(u64, bool)>> = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let mut s = baseline.session(None, derived_stream(seed, key, i as u64))?;
            while s.t() < horizon {
                if s.step()?.alarm {
                    return Ok((s.t(), false));
                }
            }
            Ok((horizon, true))
        })
        .collect();
    let mut sum = 0.0;
    let mut censored = 0;
    for l in lengths {
        let (len, c) = l?;
        sum += len as f64;
        censored += c as usize;
    }
    Ok(ArlEstimate {
        threshold: f64::NAN,
        arl: sum / n_runs as f64,
        censored,
        runs: n_runs,
    })
}
