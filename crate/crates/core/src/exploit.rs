//! Residual-weighted exploitation.
//!
//! Anchors are drawn from the labeled history with probability proportional
//! to their squared residual (inverse transform on the residual-weighted
//! empirical CDF), then perturbed with Gaussian turbulence of scale `h`.

use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Domain, Point};
use crate::error::{invalid, Result};
use crate::predictor::{residuals, FittedModel};
use crate::rng::RandomStream;

/// Draws per proposal before a turbulent point is clamped to the domain.
pub const MAX_PERTURB_ATTEMPTS: usize = 16;

/// Geometric contraction `h_t = max(h_min, rho * h_{t-1})`, kept inside
/// `[h_min, h_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceSchedule {
    pub h0: f64,
    pub rho: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl TurbulenceSchedule {
    pub fn new(h0: f64, rho: f64, h_min: f64, h_max: f64) -> Result<Self> {
        if !(h_min > 0.0 && h_min <= h0 && h0 <= h_max && h_max.is_finite()) {
            return Err(invalid(format!(
                "need 0 < h_min <= h0 <= h_max, got {h_min}, {h0}, {h_max}"
            )));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(invalid(format!("rho must lie in (0, 1], got {rho}")));
        }
        Ok(TurbulenceSchedule {
            h0,
            rho,
            h_min,
            h_max,
        })
    }

    /// Constant turbulence (`rho = 1`).
    pub fn constant(h: f64) -> Result<Self> {
        Self::new(h, 1.0, h, h)
    }

    /// Checks `h_max <= g_min`, the smallest exploration cell width.
    pub fn check_grid(&self, g_min: f64) -> Result<()> {
        if self.h_max > g_min {
            return Err(invalid(format!(
                "h_max {} exceeds smallest cell width {g_min}",
                self.h_max
            )));
        }
        Ok(())
    }
}

pub fn update_h(h_prev: f64, schedule: &TurbulenceSchedule) -> f64 {
    (schedule.rho * h_prev)
        .max(schedule.h_min)
        .clamp(schedule.h_min, schedule.h_max)
}

/// Silverman's rule of thumb `1.06 * sd_j * n^(-1/5)`, averaged over axes.
pub fn silverman_bandwidth(data: &Dataset) -> Result<f64> {
    let n = data.len();
    if n < 2 {
        return Err(invalid("need at least two samples for a bandwidth"));
    }
    let d = data.samples()[0].x.dim();
    let factor = 1.06 * (n as f64).powf(-0.2);
    let mut total = 0.0;
    for j in 0..d {
        let mean = data.iter().map(|s| s.x.0[j]).sum::<f64>() / n as f64;
        let var = data.iter().map(|s| (s.x.0[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        total += factor * var.sqrt();
    }
    Ok(total / d as f64)
}

/// Smallest `k` with `cum(k) / total >= u`; `cum` must be nondecreasing with
/// `cum(n - 1) == total`.
fn select_from_cum(n: usize, cum: impl Fn(usize) -> f64, total: f64, u: f64) -> usize {
    let (mut lo, mut hi) = (0usize, n - 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if cum(mid) / total >= u {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// Selection probabilities and CDF built from residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub weights: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub cdf: Vec<f64>,
    cumulative: Vec<f64>,
    total: f64,
}

impl WeightTable {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `w_i = e_i^2`, falling back to uniform weights when every residual is zero.
pub fn build_weights(residuals: &[f64]) -> Result<WeightTable> {
    if residuals.is_empty() {
        return Err(invalid("no residuals to weight"));
    }
    if let Some(bad) = residuals.iter().find(|e| !e.is_finite()) {
        return Err(invalid(format!("non-finite residual {bad}")));
    }
    let mut weights: Vec<f64> = residuals.iter().map(|e| e * e).collect();
    if weights.iter().sum::<f64>() == 0.0 {
        weights.iter_mut().for_each(|w| *w = 1.0);
    }
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let total = acc;
    let probabilities = weights.iter().map(|w| w / total).collect();
    let cdf = cumulative.iter().map(|c| c / total).collect();
    Ok(WeightTable {
        weights,
        probabilities,
        cdf,
        cumulative,
        total,
    })
}

/// Zero-based index `min{k : F(k) >= u}`.
pub fn inverse_cdf_select(table: &WeightTable, u: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&u) {
        return Err(invalid(format!("u = {u} outside [0, 1)")));
    }
    Ok(select_from_cum(
        table.len(),
        |k| table.cumulative[k],
        table.total,
        u,
    ))
}

/// Gaussian turbulence around `anchor` with per-axis scales. Proposals
/// outside the domain are redrawn; after [`MAX_PERTURB_ATTEMPTS`] draws the
/// last one is clamped componentwise.
pub fn perturb_scaled(
    anchor: &Point,
    scales: &[f64],
    domain: &Domain,
    rng: &mut RandomStream,
) -> Point {
    perturb_coords(&anchor.0, scales, domain, rng)
}

fn perturb_coords(
    anchor: &[f64],
    scales: &[f64],
    domain: &Domain,
    rng: &mut RandomStream,
) -> Point {
    let mut x = Point(vec![0.0; anchor.len()]);
    for _ in 0..MAX_PERTURB_ATTEMPTS {
        for (j, v) in x.0.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            *v = anchor[j] + scales[j] * z;
        }
        if domain.contains(&x) {
            return x;
        }
    }
    domain.clamp(&mut x);
    x
}

pub fn perturb(anchor: &Point, h: f64, domain: &Domain, rng: &mut RandomStream) -> Point {
    let scales = vec![h; anchor.dim()];
    perturb_scaled(anchor, &scales, domain, rng)
}

fn draw_u(rng: &mut RandomStream) -> f64 {
    Open01.sample(rng)
}

/// Draws `m_x` exploitation points from the full labeled history.
pub fn exploitation_sample(
    data: &Dataset,
    model: &FittedModel,
    m_x: usize,
    h: f64,
    domain: &Domain,
    rng: &mut RandomStream,
) -> Result<Vec<Point>> {
    if m_x == 0 {
        return Ok(Vec::new());
    }
    if data.is_empty() {
        return Err(invalid("exploitation needs a nonempty labeled history"));
    }
    let table = build_weights(&residuals(model, data)?)?;
    let mut out = Vec::with_capacity(m_x);
    for _ in 0..m_x {
        let j = inverse_cdf_select(&table, draw_u(rng))?;
        out.push(perturb(&data.samples()[j].x, h, domain, rng));
    }
    Ok(out)
}

/// Incrementally maintained residual-weighted history.
///
/// The model is frozen, so residuals of already-labeled points never change;
/// appending a label extends the cumulative weight array in place. Sampling
/// consumes the random stream exactly like [`exploitation_sample`] and makes
/// the same floating-point comparisons, so both routes return identical
/// points for identical inputs.
#[derive(Debug, Clone, Default)]
pub struct ResidualHistory {
    dim: usize,
    coords: Vec<f64>,
    cumulative: Vec<f64>,
    window: Option<usize>,
}

impl ResidualHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Restricts anchor selection to the most recent `window` labels.
    pub fn with_window(window: usize) -> Self {
        ResidualHistory {
            window: Some(window.max(1)),
            ..Self::default()
        }
    }

    pub fn from_residuals(points: Vec<Point>, residuals: &[f64]) -> Self {
        let mut h = Self::new();
        for (x, e) in points.into_iter().zip(residuals) {
            h.push(x, *e);
        }
        h
    }

    pub fn push(&mut self, x: Point, residual: f64) {
        if self.cumulative.is_empty() {
            self.dim = x.dim();
        }
        assert_eq!(x.dim(), self.dim, "history points must share one dimension");
        let last = self.cumulative.last().copied().unwrap_or(0.0);
        self.cumulative.push(last + residual * residual);
        self.coords.extend_from_slice(&x.0);
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Coordinates of entry `i`.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Squared residual of entry `i`.
    pub fn weight(&self, i: usize) -> f64 {
        let prev = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        self.cumulative[i] - prev
    }

    fn select(&self, u: f64) -> usize {
        let n = self.len();
        if let Some(w) = self.window.filter(|w| *w < n) {
            let start = n - w;
            let mut cum = Vec::with_capacity(w);
            let mut acc = 0.0;
            for i in start..n {
                acc += self.weight(i);
                cum.push(acc);
            }
            if acc == 0.0 {
                return start + select_from_cum(w, |k| (k + 1) as f64, w as f64, u);
            }
            return start + select_from_cum(w, |k| cum[k], acc, u);
        }
        let total = self.cumulative[n - 1];
        if total == 0.0 {
            select_from_cum(n, |k| (k + 1) as f64, n as f64, u)
        } else {
            select_from_cum(n, |k| self.cumulative[k], total, u)
        }
    }

    /// Anisotropic variant of [`ResidualHistory::sample`].
    pub fn sample_scaled(
        &self,
        m_x: usize,
        scales: &[f64],
        domain: &Domain,
        rng: &mut RandomStream,
    ) -> Result<Vec<Point>> {
        if m_x == 0 {
            return Ok(Vec::new());
        }
        if self.is_empty() {
            return Err(invalid("exploitation needs a nonempty labeled history"));
        }
        let mut out = Vec::with_capacity(m_x);
        for _ in 0..m_x {
            let j = self.select(draw_u(rng));
            out.push(perturb_coords(self.point(j), scales, domain, rng));
        }
        Ok(out)
    }

    pub fn sample(
        &self,
        m_x: usize,
        h: f64,
        domain: &Domain,
        rng: &mut RandomStream,
    ) -> Result<Vec<Point>> {
        let scales = vec![h; domain.dim()];
        self.sample_scaled(m_x, &scales, domain, rng)
    }

    /// Anchor index selected for a uniform draw `u`; exposed for diagnostics.
    pub fn anchor_for(&self, u: f64) -> Option<usize> {
        (!self.is_empty() && (0.0..1.0).contains(&u)).then(|| self.select(u))
    }
}
