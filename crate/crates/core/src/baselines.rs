//! Comparator policies: uniform random sampling and a score-vector MEWMA
//! monitor for Gaussian linear models.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::domain::{uniform_in_box, Domain, Point};
use crate::error::{invalid, Error, Result};
use crate::predictor::FittedModel;
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Pass,
    Random,
    ScoreAdaptive,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Pass => "pass",
            PolicyKind::Random => "random",
            PolicyKind::ScoreAdaptive => "score_adaptive",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "pass" => Ok(PolicyKind::Pass),
            "random" => Ok(PolicyKind::Random),
            "score_adaptive" | "score" => Ok(PolicyKind::ScoreAdaptive),
            other => Err(invalid(format!("unknown policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub kind: PolicyKind,
    pub epsilon: f64,
}

impl SamplingPolicy {
    pub fn new(kind: PolicyKind, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(invalid(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let epsilon = if kind == PolicyKind::Random {
            1.0
        } else {
            epsilon
        };
        Ok(SamplingPolicy { kind, epsilon })
    }

    /// `(m_x, m_e)` for a per-step budget `m`. Random sampling spends
    /// everything uniformly, reported here as `m_e`.
    pub fn split(&self, m: usize) -> (usize, usize) {
        if self.kind == PolicyKind::Random {
            return (0, m);
        }
        let m_x = ((1.0 - self.epsilon) * m as f64).floor() as usize;
        let m_x = m_x.min(m);
        (m_x, m - m_x)
    }
}

/// `m` i.i.d. uniform points over the domain.
pub fn random_sample(domain: &Domain, m: usize, rng: &mut RandomStream) -> Vec<Point> {
    (0..m)
        .map(|_| uniform_in_box(domain.lower(), domain.upper(), rng))
        .collect()
}

/// Per-observation log-likelihood gradient `phi(x) (y - phi(x) beta) / sigma2`.
pub fn score_vector(model: &FittedModel, x: &Point, y: f64, sigma2: f64) -> Result<Vec<f64>> {
    if !(y.is_finite() && sigma2.is_finite() && sigma2 > 0.0) || x.0.iter().any(|v| !v.is_finite())
    {
        return Err(invalid("score needs finite x, y and a positive sigma2"));
    }
    let phi = model.features(x)?;
    let fit: f64 = phi
        .iter()
        .zip(&model.coefficients)
        .map(|(a, b)| a * b)
        .sum();
    let k = (y - fit) / sigma2;
    Ok(phi.into_iter().map(|v| v * k).collect())
}

/// Sample covariance of score vectors plus a ridge of `1e-8 * trace / p`.
pub fn estimate_cov0(scores: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = scores.len();
    if n < 2 {
        return Err(invalid(
            "covariance estimate needs at least two score vectors",
        ));
    }
    let p = scores[0].len();
    let mut mean = DVector::<f64>::zeros(p);
    for s in scores {
        if s.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: s.len(),
            });
        }
        mean += DVector::from_column_slice(s);
    }
    mean /= n as f64;
    let mut centered = DMatrix::<f64>::zeros(n, p);
    for (i, s) in scores.iter().enumerate() {
        for j in 0..p {
            centered[(i, j)] = s[j] - mean[j];
        }
    }
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    let ridge = 1e-8 * cov.trace() / p as f64;
    let ridge = if ridge > 0.0 { ridge } else { 1e-12 };
    for j in 0..p {
        cov[(j, j)] += ridge;
    }
    Ok(cov)
}

/// MEWMA on batch-mean score vectors with a zero in-control mean.
#[derive(Debug, Clone)]
pub struct MewmaChart {
    pub lambda: f64,
    pub cov0: DMatrix<f64>,
    pub n_batch: usize,
    pub z: DVector<f64>,
    pub ucl: f64,
    chol: Cholesky<f64, Dyn>,
}

impl MewmaChart {
    pub fn new(lambda: f64, cov0: DMatrix<f64>, n_batch: usize, ucl: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(invalid(format!("lambda must lie in (0, 1], got {lambda}")));
        }
        if n_batch == 0 || !cov0.is_square() {
            return Err(invalid(
                "MEWMA needs a square cov0 and a positive batch size",
            ));
        }
        let sigma_z = &cov0 * (lambda / (2.0 - lambda) / n_batch as f64);
        let singular = || Error::Calibration {
            reason: "in-control score covariance is not positive definite".into(),
            trace: Vec::new(),
        };
        let chol = Cholesky::new(sigma_z).ok_or_else(singular)?;
        let diag = chol.l_dirty().diagonal();
        let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if diag.iter().any(|v| !(v * v > 1e-14 * max * max)) {
            return Err(singular());
        }
        let p = cov0.nrows();
        Ok(MewmaChart {
            lambda,
            cov0,
            n_batch,
            z: DVector::zeros(p),
            ucl,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn reset(&mut self) {
        self.z.fill(0.0);
    }

    /// Hotelling statistic of the current state.
    pub fn t2(&self) -> f64 {
        let w = self
            .chol
            .l()
            .solve_lower_triangular(&self.z)
            .expect("Cholesky factor is nonsingular");
        w.norm_squared()
    }
}

/// Updates `z` with a batch-mean score and returns `(T^2, alarm)`.
pub fn mewma_step(chart: &mut MewmaChart, mean_score: &[f64]) -> Result<(f64, bool)> {
    if mean_score.len() != chart.dim() {
        return Err(Error::DimensionMismatch {
            expected: chart.dim(),
            got: mean_score.len(),
        });
    }
    let lambda = chart.lambda;
    for (z, s) in chart.z.iter_mut().zip(mean_score) {
        *z = lambda * s + (1.0 - lambda) * *z;
    }
    let t2 = chart.t2();
    Ok((t2, t2 > chart.ucl))
}

/// Mean of per-observation scores over a batch.
pub fn batch_mean_score(
    model: &FittedModel,
    xs: &[Point],
    ys: &[f64],
    sigma2: f64,
) -> Result<Vec<f64>> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(invalid("batch score needs matching nonempty x and y"));
    }
    let mut acc = vec![0.0; model.coefficients.len()];
    for (x, y) in xs.iter().zip(ys) {
        for (a, s) in acc.iter_mut().zip(score_vector(model, x, *y, sigma2)?) {
            *a += s;
        }
    }
    let n = xs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}
