//! Frozen regression model: a feature map plus (ridge) least-squares
//! coefficients.
//!
//! Two feature maps are available. `Identity` is `[1, x_1, .., x_d]`.
//! `SplineInteractions` builds a clamped B-spline basis per axis over the
//! domain (uniform interior knots), drops the first basis function of every
//! axis so the remaining columns are not collinear with the intercept, and
//! appends every pairwise product of those per-axis features (interaction
//! only, no squares). Columns are ordered `[1, f_1..f_F, f_1 f_2, f_1 f_3, ..,
//! f_{F-1} f_F]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Domain, Point};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Identity,
    SplineInteractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub kind: FeatureKind,
    pub knots_per_axis: usize,
    pub spline_degree: usize,
    pub domain: Domain,
}

impl FeatureMap {
    pub fn identity(domain: Domain) -> Self {
        FeatureMap {
            kind: FeatureKind::Identity,
            knots_per_axis: 0,
            spline_degree: 0,
            domain,
        }
    }

    pub fn splines(domain: Domain, knots_per_axis: usize, spline_degree: usize) -> Self {
        FeatureMap {
            kind: FeatureKind::SplineInteractions,
            knots_per_axis,
            spline_degree,
            domain,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.domain.dim()
    }

    fn basis_per_axis(&self) -> usize {
        self.knots_per_axis + self.spline_degree + 1
    }

    /// Number of main-effect features (before the intercept and products).
    fn main_effects(&self) -> usize {
        match self.kind {
            FeatureKind::Identity => self.input_dim(),
            FeatureKind::SplineInteractions => self.input_dim() * (self.basis_per_axis() - 1),
        }
    }

    pub fn feature_dim(&self) -> usize {
        let f = self.main_effects();
        match self.kind {
            FeatureKind::Identity => 1 + f,
            FeatureKind::SplineInteractions => 1 + f + f * (f - 1) / 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kind == FeatureKind::SplineInteractions && self.spline_degree == 0 {
            return Err(invalid("spline degree must be positive"));
        }
        Ok(())
    }

    fn knots(&self, axis: usize) -> Vec<f64> {
        let lo = self.domain.lower()[axis];
        let hi = self.domain.upper()[axis];
        let p = self.spline_degree;
        let k = self.knots_per_axis;
        let mut t = Vec::with_capacity(k + 2 * (p + 1));
        t.extend(std::iter::repeat_n(lo, p + 1));
        for i in 1..=k {
            t.push(lo + (hi - lo) * i as f64 / (k + 1) as f64);
        }
        t.extend(std::iter::repeat_n(hi, p + 1));
        t
    }

    /// Main-effect features of `x`, without intercept or products.
    fn main_features(&self, x: &Point) -> Result<Vec<f64>> {
        self.domain.check_dim(x)?;
        match self.kind {
            FeatureKind::Identity => Ok(x.0.clone()),
            FeatureKind::SplineInteractions => {
                let nb = self.basis_per_axis();
                let mut out = Vec::with_capacity(self.main_effects());
                let mut basis = vec![0.0; nb];
                for (axis, v) in x.0.iter().enumerate() {
                    bspline_basis(&self.knots(axis), self.spline_degree, *v, &mut basis);
                    out.extend_from_slice(&basis[1..]);
                }
                Ok(out)
            }
        }
    }

    /// Full feature vector `phi(x)`.
    pub fn features(&self, x: &Point) -> Result<Vec<f64>> {
        let main = self.main_features(x)?;
        let mut phi = Vec::with_capacity(self.feature_dim());
        phi.push(1.0);
        phi.extend_from_slice(&main);
        if self.kind == FeatureKind::SplineInteractions {
            for a in 0..main.len() {
                for b in a + 1..main.len() {
                    phi.push(main[a] * main[b]);
                }
            }
        }
        Ok(phi)
    }
}

/// Evaluates all `knots.len() - degree - 1` B-spline basis functions at `x`
/// into `out`. `x` is clamped to the knot range; the right end belongs to the
/// last span.
pub fn bspline_basis(knots: &[f64], degree: usize, x: f64, out: &mut [f64]) {
    let nb = knots.len() - degree - 1;
    debug_assert_eq!(out.len(), nb);
    out.iter_mut().for_each(|v| *v = 0.0);
    let lo = knots[degree];
    let hi = knots[nb];
    let x = x.clamp(lo, hi);
    // span index i with knots[i] <= x < knots[i + 1]
    let mut span = degree;
    while span + 1 < nb && x >= knots[span + 1] {
        span += 1;
    }
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    for (k, v) in n.iter().enumerate() {
        out[span - degree + k] = *v;
    }
}

/// A fitted, immutable regression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub feature_map: FeatureMap,
    pub coefficients: Vec<f64>,
    pub ridge_penalty: f64,
}

/// Builds the `n x p` design matrix.
pub fn design_matrix(map: &FeatureMap, points: &[&Point]) -> Result<DMatrix<f64>> {
    let p = map.feature_dim();
    let mut phi = DMatrix::zeros(points.len(), p);
    for (i, x) in points.iter().enumerate() {
        let row = map.features(x)?;
        for (j, v) in row.into_iter().enumerate() {
            phi[(i, j)] = v;
        }
    }
    Ok(phi)
}

/// Minimizes `||y - Phi b||^2 + penalty ||b||^2` through a QR factorization of
/// the penalty-augmented design `[Phi; sqrt(penalty) I]`.
pub fn fit(data: &Dataset, map: FeatureMap, ridge_penalty: f64) -> Result<FittedModel> {
    if data.is_empty() {
        return Err(invalid("cannot fit on an empty dataset"));
    }
    if !(ridge_penalty >= 0.0 && ridge_penalty.is_finite()) {
        return Err(invalid(format!(
            "ridge penalty must be finite and nonnegative, got {ridge_penalty}"
        )));
    }
    map.validate()?;
    let points: Vec<&Point> = data.iter().map(|s| &s.x).collect();
    let y: Vec<f64> = data.iter().map(|s| s.y).collect();
    let phi = design_matrix(&map, &points)?;
    let coefficients = solve_ridge(&phi, &y, ridge_penalty)?;
    Ok(FittedModel {
        feature_map: map,
        coefficients,
        ridge_penalty,
    })
}

pub(crate) fn solve_ridge(phi: &DMatrix<f64>, y: &[f64], penalty: f64) -> Result<Vec<f64>> {
    let (n, p) = phi.shape();
    let rows = if penalty > 0.0 { n + p } else { n };
    if rows < p {
        return Err(Error::RankDeficient {
            column: rows,
            columns: p,
        });
    }
    let mut a = DMatrix::zeros(rows, p);
    a.view_mut((0, 0), (n, p)).copy_from(phi);
    let mut b = DVector::zeros(rows);
    b.rows_mut(0, n).copy_from_slice(y);
    if penalty > 0.0 {
        let s = penalty.sqrt();
        for j in 0..p {
            a[(n + j, j)] = s;
        }
    }
    let qr = a.qr();
    let r = qr.r();
    let scale = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::RankDeficient {
            column: 0,
            columns: p,
        });
    }
    if let Some(j) = (0..p).find(|&j| r[(j, j)].abs() <= 1e-10 * scale) {
        return Err(Error::RankDeficient {
            column: j,
            columns: p,
        });
    }
    let qtb = qr.q().transpose() * b;
    let beta = r.solve_upper_triangular(&qtb).ok_or(Error::RankDeficient {
        column: 0,
        columns: p,
    })?;
    Ok(beta.iter().copied().collect())
}

impl FittedModel {
    pub fn predict(&self, x: &Point) -> Result<f64> {
        let map = &self.feature_map;
        let main = map.main_features(x)?;
        let beta = &self.coefficients;
        let f = main.len();
        let mut acc = beta[0];
        for (a, v) in main.iter().enumerate() {
            acc += beta[1 + a] * v;
        }
        if map.kind == FeatureKind::SplineInteractions {
            let mut k = 1 + f;
            for a in 0..f {
                let va = main[a];
                if va == 0.0 {
                    k += f - a - 1;
                    continue;
                }
                let mut inner = 0.0;
                for b in a + 1..f {
                    inner += beta[k] * main[b];
                    k += 1;
                }
                acc += va * inner;
            }
        }
        Ok(acc)
    }

    pub fn predict_batch(&self, xs: &[Point]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn features(&self, x: &Point) -> Result<Vec<f64>> {
        self.feature_map.features(x)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: FittedModel =
            serde_json::from_str(s).map_err(|e| invalid(format!("model json: {e}")))?;
        if m.coefficients.len() != m.feature_map.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: m.feature_map.feature_dim(),
                got: m.coefficients.len(),
            });
        }
        Ok(m)
    }
}

/// `e_i = y_i - predict(x_i)`, in dataset order.
pub fn residuals(model: &FittedModel, data: &Dataset) -> Result<Vec<f64>> {
    data.iter()
        .map(|s| Ok(s.y - model.predict(&s.x)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::BenchmarkFunction;
    use crate::domain::LabeledSample;
    use crate::rng::stream;
    use rand::Rng;

    fn dataset(points: Vec<Vec<f64>>, f: impl Fn(&[f64]) -> f64) -> Dataset {
        points
            .into_iter()
            .map(|x| LabeledSample {
                y: f(&x),
                x: Point(x),
                t: 0,
            })
            .collect()
    }

    fn line() -> Dataset {
        dataset((0..10).map(|i| vec![i as f64 * 0.1]).collect(), |x| {
            2.0 * x[0] + 1.0
        })
    }

    #[test]
    fn exact_line_is_recovered() {
        let m = fit(&line(), FeatureMap::identity(Domain::unit(1)), 0.0).unwrap();
        assert!((m.coefficients[0] - 1.0).abs() < 1e-10);
        assert!((m.coefficients[1] - 2.0).abs() < 1e-10);
        assert!((m.predict(&Point(vec![3.0])).unwrap() - 7.0).abs() < 1e-9);
        assert!(residuals(&m, &line())
            .unwrap()
            .iter()
            .all(|e| e.abs() < 1e-10));
    }

    #[test]
    fn huge_penalty_shrinks_to_zero() {
        let ols = fit(&line(), FeatureMap::identity(Domain::unit(1)), 0.0).unwrap();
        let ridge = fit(&line(), FeatureMap::identity(Domain::unit(1)), 1e12).unwrap();
        let norm = |b: &[f64]| b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm(&ridge.coefficients) < 1e-6 * norm(&ols.coefficients));
    }

    #[test]
    fn linkletter_coefficients_are_recovered() {
        let f = BenchmarkFunction::Linkletter;
        let mut rng = stream(11);
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..8).map(|_| rng.random()).collect())
            .collect();
        let data = dataset(pts, |x| f.eval(&Point(x.to_vec())).unwrap());
        let m = fit(&data, FeatureMap::identity(f.domain()), 0.0).unwrap();
        assert!(m.coefficients[0].abs() < 1e-8);
        for n in 0..8 {
            let want = 0.2 / f64::powi(2.0, n as i32);
            assert!((m.coefficients[n + 1] - want).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_deficiency_names_the_column() {
        // duplicated x-values collapse to a single distinct point
        let data = dataset(vec![vec![0.5, 0.5]; 5], |_| 1.0);
        let err = fit(&data, FeatureMap::identity(Domain::unit(2)), 0.0).unwrap_err();
        assert!(
            matches!(
                err,
                Error::RankDeficient {
                    column: 1,
                    columns: 3
                }
            ),
            "{err:?}"
        );
        assert!(fit(&data, FeatureMap::identity(Domain::unit(2)), 1e-3).is_ok());
    }

    #[test]
    fn spline_basis_is_a_partition_of_unity() {
        let map = FeatureMap::splines(Domain::unit(1), 5, 3);
        let knots = map.knots(0);
        let mut out = vec![0.0; 9];
        for i in 0..=200 {
            let x = i as f64 / 200.0;
            bspline_basis(&knots, 3, x, &mut out);
            let s: f64 = out.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(out.iter().all(|v| *v >= -1e-15));
        }
        bspline_basis(&knots, 3, 1.0, &mut out);
        assert!((out[8] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spline_feature_dimension() {
        let map = FeatureMap::splines(BenchmarkFunction::Branin.domain(), 5, 3);
        // 2 axes x 8 features, plus 120 products, plus intercept
        assert_eq!(map.feature_dim(), 137);
        let phi = map.features(&Point(vec![0.3, 4.0])).unwrap();
        assert_eq!(phi.len(), 137);
        let again = map.features(&Point(vec![0.3, 4.0])).unwrap();
        assert!(phi
            .iter()
            .zip(&again)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn fast_predict_matches_feature_dot() {
        let f = BenchmarkFunction::Branin;
        let mut rng = stream(5);
        let domain = f.domain();
        let pts: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                vec![
                    -5.0 + 15.0 * rng.random::<f64>(),
                    15.0 * rng.random::<f64>(),
                ]
            })
            .collect();
        let data = dataset(pts, |x| f.eval(&Point(x.to_vec())).unwrap());
        let m = fit(&data, FeatureMap::splines(domain, 5, 3), 1e-3).unwrap();
        for s in data.iter().take(50) {
            let phi = m.features(&s.x).unwrap();
            let dot: f64 = phi.iter().zip(&m.coefficients).map(|(a, b)| a * b).sum();
            assert!((dot - m.predict(&s.x).unwrap()).abs() < 1e-9 * (1.0 + dot.abs()));
        }
        let batch = m
            .predict_batch(&data.iter().map(|s| s.x.clone()).collect::<Vec<_>>())
            .unwrap();
        for (s, b) in data.iter().zip(batch) {
            assert_eq!(m.predict(&s.x).unwrap().to_bits(), b.to_bits());
        }
    }

    #[test]
    fn model_json_round_trip() {
        let m = fit(&line(), FeatureMap::identity(Domain::unit(1)), 0.5).unwrap();
        let back = FittedModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
    }
}
