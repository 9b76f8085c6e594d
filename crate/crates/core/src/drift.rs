//! Localized drift injection and noisy labeling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::benchmarks::NoiseSpec;
use crate::domain::{Domain, HyperRect, Point};
use crate::error::{invalid, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftKind {
    Abrupt,
    Incremental,
}

impl DriftKind {
    pub fn name(self) -> &'static str {
        match self {
            DriftKind::Abrupt => "abrupt",
            DriftKind::Incremental => "incremental",
        }
    }
}

impl std::str::FromStr for DriftKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abrupt" => Ok(DriftKind::Abrupt),
            "incremental" => Ok(DriftKind::Incremental),
            other => Err(invalid(format!("unknown drift kind '{other}'"))),
        }
    }
}

/// A realized drift: an additive shift of `delta * sigma` inside `region`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub kind: DriftKind,
    /// Magnitude in multiples of the noise standard deviation.
    pub delta: f64,
    /// Noise standard deviation used to convert `delta` to response units.
    pub sigma: f64,
    pub volume_ratio: f64,
    pub onset: u64,
    /// Step at which an incremental drift reaches full magnitude; equals
    /// `onset` for abrupt drift.
    pub ramp_end: u64,
    pub region: HyperRect,
}

impl DriftSpec {
    pub fn validate(&self, domain: &Domain) -> Result<()> {
        if self.ramp_end < self.onset {
            return Err(invalid("ramp_end precedes onset"));
        }
        if !(self.volume_ratio > 0.0 && self.volume_ratio < 1.0) {
            return Err(invalid("volume ratio must lie in (0, 1)"));
        }
        if !self.region.within(domain) {
            return Err(invalid("drift region is not contained in the domain"));
        }
        Ok(())
    }

    /// Full shift in response units.
    pub fn magnitude(&self) -> f64 {
        self.delta * self.sigma
    }
}

/// Draws a drift box covering `volume_ratio` of the domain volume, with the
/// center uniform over the positions that keep the box inside the domain.
pub fn make_drift_region(
    domain: &Domain,
    volume_ratio: f64,
    rng: &mut RandomStream,
) -> Result<HyperRect> {
    if !(volume_ratio > 0.0 && volume_ratio < 1.0) {
        return Err(invalid(format!(
            "volume ratio {volume_ratio} outside (0, 1)"
        )));
    }
    let d = domain.dim();
    let side = volume_ratio.powf(1.0 / d as f64);
    let half_widths: Vec<f64> = (0..d).map(|j| 0.5 * side * domain.width(j)).collect();
    let center = (0..d)
        .map(|j| {
            let lo = domain.lower()[j] + half_widths[j];
            let hi = domain.upper()[j] - half_widths[j];
            lo + (hi - lo) * rng.random::<f64>()
        })
        .collect();
    Ok(HyperRect {
        center: Point(center),
        half_widths,
    })
}

/// Drift contribution at `(x, t)` in response units.
pub fn drift_shift(spec: &DriftSpec, x: &Point, t: u64) -> f64 {
    if t < spec.onset || !spec.region.contains(x) {
        return 0.0;
    }
    let full = spec.magnitude();
    match spec.kind {
        DriftKind::Abrupt => full,
        DriftKind::Incremental => {
            if t == spec.onset {
                return 0.0;
            }
            if spec.ramp_end == spec.onset || t >= spec.ramp_end {
                return full;
            }
            let frac = (t - spec.onset) as f64 / (spec.ramp_end - spec.onset) as f64;
            full * frac.min(1.0)
        }
    }
}

/// `f(x) + N(0, sigma^2) + drift_shift(x, t)`.
pub fn sample_label(
    f: impl Fn(&Point) -> Result<f64>,
    drift: Option<&DriftSpec>,
    noise: NoiseSpec,
    x: &Point,
    t: u64,
    rng: &mut RandomStream,
) -> Result<f64> {
    let mut y = f(x)?;
    if noise.sigma > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        y += noise.sigma * z;
    }
    if let Some(spec) = drift {
        y += drift_shift(spec, x, t);
    }
    Ok(y)
}
