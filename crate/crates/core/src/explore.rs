//! Time-weighted accept-reject exploration over a grid.
//!
//! Cells are indexed row-major with axis 0 most significant:
//! `index = ((c_0 * B_1 + c_1) * B_2 + c_2) ...`, zero-based. Only visited
//! cells are stored in the [`LastVisitMap`]; a missing cell reads as last
//! visited at `t = 0`.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Open01};
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, Point};
use crate::error::{invalid, Error, Result};
use crate::rng::RandomStream;

/// Rejected proposals allowed per requested exploration point.
pub const ATTEMPTS_PER_POINT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    domain: Domain,
    bins: Vec<usize>,
}

impl GridSpec {
    pub fn new(domain: Domain, bins: Vec<usize>) -> Result<Self> {
        if bins.len() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: bins.len(),
            });
        }
        if bins.iter().any(|b| *b == 0) {
            return Err(invalid("every axis needs at least one bin"));
        }
        let count = bins
            .iter()
            .try_fold(1u64, |acc, b| acc.checked_mul(*b as u64));
        if count.is_none() {
            return Err(invalid("grid cell count overflows"));
        }
        Ok(GridSpec { domain, bins })
    }

    /// The same bin count on every axis.
    pub fn uniform(domain: Domain, bins: usize) -> Result<Self> {
        let d = domain.dim();
        Self::new(domain, vec![bins; d])
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn cell_count(&self) -> u64 {
        self.bins.iter().map(|b| *b as u64).product()
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        self.domain.width(axis) / self.bins[axis] as f64
    }

    /// Smallest cell width across axes.
    pub fn min_cell_width(&self) -> f64 {
        (0..self.bins.len())
            .map(|j| self.cell_width(j))
            .fold(f64::INFINITY, f64::min)
    }

    fn axis_index(&self, axis: usize, v: f64) -> usize {
        let lo = self.domain.lower()[axis];
        let frac = (v - lo) / self.domain.width(axis);
        let b = self.bins[axis];
        ((frac * b as f64).floor().max(0.0) as usize).min(b - 1)
    }

    fn axis_edge(&self, axis: usize, k: usize) -> f64 {
        let lo = self.domain.lower()[axis];
        if k == self.bins[axis] {
            return self.domain.upper()[axis];
        }
        lo + self.domain.width(axis) * k as f64 / self.bins[axis] as f64
    }

    pub fn cell_of(&self, x: &Point) -> Result<u64> {
        self.domain.check_dim(x)?;
        if !self.domain.contains(x) {
            return Err(invalid(format!(
                "point {:?} is outside the grid domain",
                x.0
            )));
        }
        Ok(self.cell_of_unchecked(x))
    }

    fn cell_of_unchecked(&self, x: &Point) -> u64 {
        let mut idx = 0u64;
        for (j, v) in x.0.iter().enumerate() {
            idx = idx * self.bins[j] as u64 + self.axis_index(j, *v) as u64;
        }
        idx
    }

    /// Per-axis bin coordinates of a cell index.
    pub fn cell_coords(&self, mut cell: u64) -> Vec<usize> {
        let mut coords = vec![0; self.bins.len()];
        for j in (0..self.bins.len()).rev() {
            let b = self.bins[j] as u64;
            coords[j] = (cell % b) as usize;
            cell /= b;
        }
        coords
    }

    /// Lower and upper corners of a cell.
    pub fn cell_bounds(&self, cell: u64) -> (Vec<f64>, Vec<f64>) {
        let coords = self.cell_coords(cell);
        let lo = coords
            .iter()
            .enumerate()
            .map(|(j, k)| self.axis_edge(j, *k))
            .collect();
        let hi = coords
            .iter()
            .enumerate()
            .map(|(j, k)| self.axis_edge(j, k + 1))
            .collect();
        (lo, hi)
    }

    /// Uniform point in the half-open cell box whose `cell_of` is exactly
    /// `cell`.
    pub fn sample_in_cell(&self, cell: u64, rng: &mut RandomStream) -> Point {
        let coords = self.cell_coords(cell);
        let mut out = Vec::with_capacity(coords.len());
        for (j, k) in coords.into_iter().enumerate() {
            let lo = self.axis_edge(j, k);
            let hi = self.axis_edge(j, k + 1);
            let mut v = lo + (hi - lo) * rng.random::<f64>();
            // rounding can push v across a bin edge; walk it back
            while self.axis_index(j, v) < k {
                v = v.next_up();
            }
            while self.axis_index(j, v) > k {
                v = v.next_down();
            }
            out.push(v);
        }
        Point(out)
    }
}

/// Sparse map from cell index to last-visit time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LastVisitMap {
    visits: HashMap<u64, u64>,
}

impl LastVisitMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Last-visit time, `0` for cells never stored.
    pub fn tau(&self, cell: u64) -> u64 {
        self.visits.get(&cell).copied().unwrap_or(0)
    }

    pub fn is_stored(&self, cell: u64) -> bool {
        self.visits.contains_key(&cell)
    }

    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    pub fn stamp(&mut self, cell: u64, t: u64) -> Result<()> {
        if let Some(prev) = self.visits.get(&cell) {
            if t < *prev {
                return Err(invalid(format!(
                    "cell {cell}: stamp time {t} precedes stored {prev}"
                )));
            }
        }
        self.visits.insert(cell, t);
        Ok(())
    }

    /// Stored entries sorted by cell index.
    pub fn entries(&self) -> Vec<(u64, u64)> {
        let mut v: Vec<(u64, u64)> = self.visits.iter().map(|(c, t)| (*c, *t)).collect();
        v.sort_unstable();
        v
    }

    /// `cell_index,tau` CSV, sorted by cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cell_index,tau\n");
        for (c, t) in self.entries() {
            let _ = writeln!(s, "{c},{t}");
        }
        s
    }
}

/// `min{ delta_t / min{t, |G|}, 1 }`.
pub fn acceptance_prob(delta_t: u64, t: u64, cell_count: u64) -> f64 {
    let norm = t.min(cell_count).max(1);
    (delta_t as f64 / norm as f64).min(1.0)
}

/// Stamps the cells touched by `exploit_set` with `t`, then draws `m_e`
/// exploration points by uniform cell proposal and time-weighted acceptance.
pub fn exploration_sample(
    grid: &GridSpec,
    visits: &mut LastVisitMap,
    t: u64,
    m_e: usize,
    exploit_set: &[Point],
    rng: &mut RandomStream,
) -> Result<Vec<Point>> {
    if t == 0 {
        return Err(invalid("exploration runs at t >= 1"));
    }
    for x in exploit_set {
        grid.domain.check_dim(x)?;
        let mut x = x.clone();
        grid.domain.clamp(&mut x);
        visits.stamp(grid.cell_of_unchecked(&x), t)?;
    }
    let count = grid.cell_count();
    let budget = ATTEMPTS_PER_POINT.saturating_mul(m_e);
    let mut out = Vec::with_capacity(m_e);
    let mut rejected = 0usize;
    let mut proposals = 0usize;
    while out.len() < m_e {
        let cell = rng.random_range(0..count);
        proposals += 1;
        let tau = visits.tau(cell);
        let p = acceptance_prob(t.saturating_sub(tau), t, count);
        let u: f64 = Open01.sample(rng);
        if u <= p {
            out.push(grid.sample_in_cell(cell, rng));
            visits.stamp(cell, t)?;
        } else {
            rejected += 1;
            if rejected >= budget {
                return Err(Error::ProgressFailure {
                    accepted: out.len(),
                    requested: m_e,
                    attempts: proposals,
                });
            }
        }
    }
    Ok(out)
}

/// Stamps every cell touched by an initial dataset with `t = 0`.
pub fn stamp_initial<'a>(
    grid: &GridSpec,
    visits: &mut LastVisitMap,
    points: impl IntoIterator<Item = &'a Point>,
) {
    for x in points {
        let mut x = x.clone();
        grid.domain.clamp(&mut x);
        let cell = grid.cell_of_unchecked(&x);
        if !visits.is_stored(cell) {
            visits.visits.insert(cell, 0);
        }
    }
}
