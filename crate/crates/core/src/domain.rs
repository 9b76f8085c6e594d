//! Input-space geometry and labeled data records.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A point of the input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

/// Axis-aligned box `[lower_j, upper_j]` for each axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(invalid("domain must have at least one axis"));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid(format!(
                    "axis {j}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Domain { lower, upper })
    }

    /// The unit hypercube `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Domain {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|j| self.width(j)).product()
    }

    pub fn contains(&self, x: &Point) -> bool {
        x.dim() == self.dim()
            && x.0
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn check_dim(&self, x: &Point) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        Ok(())
    }

    pub fn clamp(&self, x: &mut Point) {
        for (j, v) in x.0.iter_mut().enumerate() {
            *v = v.clamp(self.lower[j], self.upper[j]);
        }
    }

    /// Min-max scale a point to `[0, 1]^d`.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.lower[j]) / self.width(j))
            .collect()
    }

    pub fn center(&self) -> Point {
        Point(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| 0.5 * (lo + hi))
                .collect(),
        )
    }
}

/// Closed axis-aligned hyper-rectangle `{x : |x_j - center_j| <= half_widths_j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRect {
    pub center: Point,
    pub half_widths: Vec<f64>,
}

impl HyperRect {
    pub fn contains(&self, x: &Point) -> bool {
        x.dim() == self.center.dim()
            && x.0
                .iter()
                .zip(self.center.0.iter().zip(&self.half_widths))
                .all(|(v, (c, w))| (v - c).abs() <= *w)
    }

    pub fn volume(&self) -> f64 {
        self.half_widths.iter().map(|w| 2.0 * w).product()
    }

    /// Euclidean distance from an interior point to the complement of the box.
    pub fn inner_radius(&self, x: &Point) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        x.0.iter()
            .zip(self.center.0.iter().zip(&self.half_widths))
            .map(|(v, (c, w))| w - (v - c).abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn within(&self, domain: &Domain) -> bool {
        (0..domain.dim()).all(|j| {
            let c = self.center.0[j];
            let w = self.half_widths[j];
            c - w >= domain.lower()[j] && c + w <= domain.upper()[j]
        })
    }
}

/// Uniform point inside the box `[lo, hi)` per axis.
pub fn uniform_in_box(lo: &[f64], hi: &[f64], rng: &mut crate::rng::RandomStream) -> Point {
    Point(
        lo.iter()
            .zip(hi)
            .map(|(a, b)| {
                let v = a + (b - a) * rng.random::<f64>();
                if v >= *b {
                    a.max(b.next_down())
                } else {
                    v
                }
            })
            .collect(),
    )
}

/// One labeled observation `(x, y)` acquired at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Point,
    pub y: f64,
    pub t: u64,
}

/// Append-only labeled history with nondecreasing acquisition times.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sample: LabeledSample) -> Result<()> {
        if let Some(last) = self.samples.last() {
            if sample.t < last.t {
                return Err(invalid(format!(
                    "time regression: appending t={} after t={}",
                    sample.t, last.t
                )));
            }
            if sample.x.dim() != last.x.dim() {
                return Err(Error::DimensionMismatch {
                    expected: last.x.dim(),
                    got: sample.x.dim(),
                });
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledSample> {
        self.samples.iter()
    }
}

impl FromIterator<LabeledSample> for Dataset {
    fn from_iter<I: IntoIterator<Item = LabeledSample>>(iter: I) -> Self {
        let mut samples: Vec<LabeledSample> = iter.into_iter().collect();
        samples.sort_by_key(|s| s.t);
        Dataset { samples }
    }
}
