use std::collections::HashSet;

use pass_core::baselines::random_sample;
use pass_core::exploit::{build_weights, inverse_cdf_select, ResidualHistory};
use pass_core::explore::{exploration_sample, GridSpec, LastVisitMap};
use pass_core::rng::stream;
use pass_core::{Domain, HyperRect, Point};
use proptest::prelude::*;
use rand::Rng;

/// `P(||Z|| <= c)` for a standard normal in `d` dimensions by Simpson's rule
/// on the chi density.
fn chi_cdf(c: f64, d: usize) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    let half = d as f64 / 2.0;
    // Gamma(d/2) by recursion from Gamma(1) or Gamma(1/2)
    let mut g = if d % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut a = if d % 2 == 0 { 1.0 } else { 0.5 };
    while a < half {
        g *= a;
        a += 1.0;
    }
    let norm = 2f64.powf(half - 1.0) * g;
    let pdf = |x: f64| x.powi(d as i32 - 1) * (-x * x / 2.0).exp() / norm;
    let n = 4000;
    let h = c / n as f64;
    let mut s = pdf(0.0) + pdf(c);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(i as f64 * h);
    }
    (s * h / 3.0).min(1.0)
}

#[test]
fn chi_cdf_oracle_sanity() {
    // d = 1: 2 Phi(c) - 1; d = 2: 1 - exp(-c^2 / 2)
    assert!((chi_cdf(1.959963984540054, 1) - 0.95).abs() < 1e-9);
    assert!((chi_cdf(1.5, 2) - (1.0 - (-1.125f64).exp())).abs() < 1e-9);
}

struct Geometry {
    domain: Domain,
    region: HyperRect,
    anchors: Vec<(Vec<f64>, f64)>,
    h: f64,
}

fn geometries() -> Vec<Geometry> {
    vec![
        Geometry {
            domain: Domain::unit(2),
            region: HyperRect {
                center: Point(vec![0.5, 0.5]),
                half_widths: vec![0.1, 0.1],
            },
            anchors: vec![
                (vec![0.5, 0.5], 3.0),
                (vec![0.55, 0.45], 2.0),
                (vec![0.1, 0.9], 1.0),
                (vec![0.8, 0.2], 0.5),
            ],
            h: 0.05,
        },
        Geometry {
            domain: Domain::new(vec![-3.0; 3], vec![3.0; 3]).unwrap(),
            region: HyperRect {
                center: Point(vec![1.0, -1.0, 0.0]),
                half_widths: vec![0.6, 0.6, 0.6],
            },
            anchors: vec![
                (vec![1.0, -1.0, 0.0], 4.0),
                (vec![1.2, -0.8, 0.1], 1.0),
                (vec![-2.0, 2.0, 2.0], 2.0),
            ],
            h: 0.3,
        },
        Geometry {
            domain: Domain::unit(5),
            region: HyperRect {
                center: Point(vec![0.3; 5]),
                half_widths: vec![0.2; 5],
            },
            anchors: vec![
                (vec![0.3; 5], 2.0),
                (vec![0.25, 0.35, 0.3, 0.3, 0.2], 1.5),
                (vec![0.9; 5], 1.0),
            ],
            h: 0.04,
        },
    ]
}

#[test]
fn exploitation_hit_rate_respects_chi_bound() {
    for (gi, g) in geometries().into_iter().enumerate() {
        let d = g.domain.dim();
        let mut hist = ResidualHistory::new();
        for (x, e) in &g.anchors {
            hist.push(Point(x.clone()), *e);
        }
        let total: f64 = g.anchors.iter().map(|(_, e)| e * e).sum();
        let bound: f64 = g
            .anchors
            .iter()
            .map(|(x, e)| {
                let p = Point(x.clone());
                let r = if g.region.contains(&p) { g.region.inner_radius(&p) } else { 0.0 };
                e * e / total * chi_cdf(r / g.h, d)
            })
            .sum();
        let n = 100_000;
        let mut rng = stream(100 + gi as u64);
        let pts = hist.sample(n, g.h, &g.domain, &mut rng).unwrap();
        let hits = pts.iter().filter(|x| g.region.contains(x)).count();
        let rate = hits as f64 / n as f64;
        let se = (rate * (1.0 - rate) / n as f64).sqrt();
        assert!(bound > 0.1, "geometry {gi} has a vacuous bound {bound}");
        assert!(rate >= bound - 3.0 * se, "geometry {gi}: rate {rate} below bound {bound}");
    }
}

#[test]
fn pure_exploration_visits_every_cell() {
    let grids = [
        GridSpec::uniform(Domain::unit(2), 8).unwrap(),
        GridSpec::uniform(Domain::new(vec![-1.0; 3], vec![2.0; 3]).unwrap(), 4).unwrap(),
        GridSpec::uniform(Domain::unit(5), 2).unwrap(),
        GridSpec::new(Domain::unit(2), vec![3, 5]).unwrap(),
    ];
    for grid in &grids {
        let cells = grid.cell_count();
        assert!(cells <= 64);
        for seed in 0..20 {
            let mut rng = stream(seed);
            let mut visits = LastVisitMap::new();
            let mut seen = HashSet::new();
            for t in 1..=50 * cells {
                for x in exploration_sample(grid, &mut visits, t, 3, &[], &mut rng).unwrap() {
                    seen.insert(grid.cell_of(&x).unwrap());
                }
                if seen.len() as u64 == cells {
                    break;
                }
            }
            assert_eq!(seen.len() as u64, cells, "seed {seed} left cells unvisited");
        }
    }
}

#[test]
fn inverse_cdf_frequencies_match_weights() {
    let residuals = [0.5, -2.0, 1.0, 0.0, 3.0, -0.25];
    let table = build_weights(&residuals).unwrap();
    let total: f64 = residuals.iter().map(|e| e * e).sum();
    let n = 200_000;
    let mut counts = vec![0usize; residuals.len()];
    let mut rng = stream(4);
    for _ in 0..n {
        counts[inverse_cdf_select(&table, rng.random::<f64>()).unwrap()] += 1;
    }
    for (i, e) in residuals.iter().enumerate() {
        let p = e * e / total;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let f = counts[i] as f64 / n as f64;
        assert!((f - p).abs() <= 3.0 * se + 1e-12, "index {i}: {f} vs {p}");
    }
    assert_eq!(counts[3], 0);
}

#[test]
fn all_zero_residuals_select_uniformly() {
    let k = 8;
    let table = build_weights(&vec![0.0; k]).unwrap();
    let n = 80_000;
    let mut counts = vec![0usize; k];
    let mut rng = stream(8);
    for _ in 0..n {
        counts[inverse_cdf_select(&table, rng.random::<f64>()).unwrap()] += 1;
    }
    let expected = n as f64 / k as f64;
    let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
    // 99.9% point of chi-square with 7 degrees of freedom
    assert!(chi2 < 24.32, "chi-square {chi2}");
}

#[test]
fn random_sample_is_uniform_in_mean() {
    let d = Domain::new(vec![-5.0, 0.0, 10.0], vec![10.0, 15.0, 11.0]).unwrap();
    let n = 50_000;
    let pts = random_sample(&d, n, &mut stream(2));
    for j in 0..3 {
        let m = pts.iter().map(|x| x.0[j]).sum::<f64>() / n as f64;
        let w = d.width(j);
        let se = w / 12f64.sqrt() / (n as f64).sqrt();
        let c = 0.5 * (d.lower()[j] + d.upper()[j]);
        assert!((m - c).abs() < 4.0 * se, "axis {j}: {m} vs {c}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exploitation_stays_in_domain(
        anchors in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -5.0f64..5.0), 1..20),
        h in 0.001f64..2.0,
        seed in any::<u64>(),
    ) {
        let domain = Domain::unit(2);
        let mut hist = ResidualHistory::new();
        for (a, b, e) in &anchors {
            hist.push(Point(vec![*a, *b]), *e);
        }
        let pts = hist.sample(50, h, &domain, &mut stream(seed)).unwrap();
        prop_assert_eq!(pts.len(), 50);
        prop_assert!(pts.iter().all(|x| domain.contains(x)));
    }

    #[test]
    fn exploration_returns_requested_count_in_domain(
        bins in 1usize..6,
        m_e in 0usize..10,
        t in 1u64..500,
        seed in any::<u64>(),
    ) {
        let grid = GridSpec::uniform(Domain::unit(2), bins).unwrap();
        // a cell stamped this step cannot accept again
        let m_e = m_e.min(bins * bins);
        let mut visits = LastVisitMap::new();
        let pts = exploration_sample(&grid, &mut visits, t, m_e, &[], &mut stream(seed)).unwrap();
        prop_assert_eq!(pts.len(), m_e);
        for x in &pts {
            prop_assert!(grid.domain().contains(x));
            prop_assert_eq!(visits.tau(grid.cell_of(x).unwrap()), t);
        }
    }
}
