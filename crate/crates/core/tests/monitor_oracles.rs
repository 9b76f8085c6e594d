use pass_core::monitor::{
    calibrate_ucl_bootstrap, calibrate_ucl_mc, log_s2_moments, log_variance, sample_variance,
    top_r_mean, two_chart_step, ChartPair, EwmaChart, GeneratorSource, ScoredBank, TrajectoryBank,
};
use pass_core::rng::stream;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::digamma as digamma_oracle;

fn sort_oracle(v: &[f64], r: usize) -> f64 {
    let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    a.sort_by(|x, y| y.partial_cmp(x).unwrap());
    a[..r].iter().sum::<f64>() / r as f64
}

fn replay(lambda: f64, theta0: f64, thetas: &[f64]) -> Vec<f64> {
    let mut z = 0.0f64;
    thetas
        .iter()
        .map(|t| {
            z = lambda * (t - theta0).max(0.0) + (1.0 - lambda) * z;
            z
        })
        .collect()
}

#[test]
fn top_r_matches_sort_on_random_vectors() {
    let mut rng = stream(11);
    for _ in 0..10_000 {
        let n = rng.random_range(1..40);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let r = rng.random_range(1..=n);
        let got = top_r_mean(&v, r).unwrap();
        assert!((got - sort_oracle(&v, r)).abs() <= 1e-12 * (1.0 + got.abs()));
    }
}

#[test]
fn log_s2_moments_match_monte_carlo() {
    let mut rng = stream(5);
    for (n, sigma2) in [(5usize, 1.0), (20, 4.0), (100, 0.25)] {
        let draws = 200_000;
        let sigma = f64::sqrt(sigma2);
        let mut vals = Vec::with_capacity(draws);
        let mut batch = vec![0.0; n];
        for _ in 0..draws {
            for b in batch.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *b = sigma * z;
            }
            vals.push(log_variance(&batch).unwrap());
        }
        let m = vals.iter().sum::<f64>() / draws as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let (mean, var) = log_s2_moments(sigma2, n).unwrap();

        let k = (n - 1) as f64;
        let oracle_mean = sigma2.ln() - k.ln() + digamma_oracle(k / 2.0) + std::f64::consts::LN_2;
        assert!((mean - oracle_mean).abs() < 1e-9);

        let se_mean = (v / draws as f64).sqrt();
        assert!(
            (m - mean).abs() < 3.0 * se_mean,
            "n={n}: mc mean {m} vs {mean}"
        );
        // SE of a sample variance from the fourth central moment
        let m4 = vals.iter().map(|x| (x - m).powi(4)).sum::<f64>() / draws as f64;
        let se_var = ((m4 - v * v) / draws as f64).sqrt();
        assert!((v - var).abs() < 3.0 * se_var, "n={n}: mc var {v} vs {var}");
    }
}

#[test]
fn gaussian_memoryless_calibration_matches_normal_quantile() {
    let template = EwmaChart::log_variance(1.0, 0.0, 2.0).unwrap();
    let gen = |rng: &mut pass_core::RandomStream| -> pass_core::Result<f64> {
        Ok(StandardNormal.sample(rng))
    };
    let out = calibrate_ucl_mc(gen, &template, 200.0, 2000, 2000, &mut stream(3)).unwrap();
    let exact = Normal::new(0.0, 1.0)
        .unwrap()
        .inverse_cdf(1.0 - 1.0 / 200.0);
    assert!((exact - 2.5758).abs() < 1e-3);
    assert!(
        (out.threshold - exact).abs() < 0.05 * exact,
        "{} vs {exact}",
        out.threshold
    );
}

#[test]
fn larger_limits_give_longer_in_control_runs() {
    let chart = EwmaChart::log_variance(0.2, 0.0, f64::INFINITY).unwrap();
    let mut seeds = stream(9);
    let sources: Vec<_> = (0..500)
        .map(|_| {
            GeneratorSource::new(
                chart.clone(),
                |rng: &mut pass_core::RandomStream| -> pass_core::Result<f64> {
                    Ok(StandardNormal.sample(rng))
                },
                stream(seeds.random()),
            )
        })
        .collect();
    let mut bank = TrajectoryBank::new(sources, 5000).unwrap();
    let mut scored = ScoredBank::new(&mut bank, |v: &[f64]| v[0]);
    let a = scored.arl(0.4).unwrap().arl;
    let b = scored.arl(0.8).unwrap().arl;
    let c = scored.arl(1.6).unwrap().arl;
    assert!(a < b && b < c, "{a} {b} {c}");
}

#[test]
fn bootstrap_quantile_matches_order_statistic() {
    let mut rng = stream(21);
    let u: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
    let mut sorted = u.clone();
    sorted.sort_by(f64::total_cmp);
    // h = 999 * 0.995 = 994.005
    let oracle = sorted[994] + 0.005 * (sorted[995] - sorted[994]);
    let got = calibrate_ucl_bootstrap(&u, 0.995).unwrap();
    assert!((got - oracle).abs() < 1e-12);
    assert!((got - 0.995).abs() < 0.01);
    assert_eq!(calibrate_ucl_bootstrap(&[3.5; 20], 0.2).unwrap(), 3.5);
    assert!(calibrate_ucl_bootstrap(&u, 1.0).is_err());
}

#[test]
fn two_charts_flag_when_either_exceeds() {
    let mut a = EwmaChart::top_r(0.2, 1.0, 0.5, 2).unwrap();
    let mut v = EwmaChart::log_variance(0.2, 0.0, 100.0).unwrap();
    let r = two_chart_step(Some(&mut a), Some(&mut v), &[10.0, -10.0, 0.1, 0.2]).unwrap();
    assert!(r.alarm);
    assert_eq!(r.which.len(), 1);
    assert!((r.theta_a.unwrap() - 10.0).abs() < 1e-12);
    let s2 = sample_variance(&[10.0, -10.0, 0.1, 0.2]).unwrap();
    assert!((r.theta_v.unwrap() - s2.ln()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ewma_never_negative_and_replays_exactly(
        lambda in 0.01f64..=1.0,
        theta0 in -5.0f64..5.0,
        thetas in prop::collection::vec(-20.0f64..20.0, 1..200),
    ) {
        let mut chart = EwmaChart::log_variance(lambda, theta0, 1.0).unwrap();
        let zs: Vec<f64> = thetas.iter().map(|t| chart.update(*t)).collect();
        prop_assert!(zs.iter().all(|z| *z >= 0.0));
        prop_assert_eq!(zs, replay(lambda, theta0, &thetas));
    }

    #[test]
    fn larger_statistics_give_larger_ewma(
        lambda in 0.01f64..=1.0,
        base in prop::collection::vec(-10.0f64..10.0, 1..100),
        bumps in prop::collection::vec(0.0f64..5.0, 100),
    ) {
        let up: Vec<f64> = base.iter().zip(&bumps).map(|(b, d)| b + d).collect();
        let mut lo = EwmaChart::log_variance(lambda, 0.0, 1.0).unwrap();
        let mut hi = lo.clone();
        for (b, u) in base.iter().zip(&up) {
            prop_assert!(hi.update(*u) >= lo.update(*b));
        }
    }

    #[test]
    fn log_variance_shifts_by_log_scale(
        v in prop::collection::vec(-10.0f64..10.0, 3..30),
        c in 0.01f64..100.0,
    ) {
        prop_assume!(sample_variance(&v).unwrap() > 1e-6);
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        let d = log_variance(&scaled).unwrap() - log_variance(&v).unwrap();
        prop_assert!((d - 2.0 * c.ln()).abs() < 1e-9);
    }

    #[test]
    fn top_r_is_between_mean_and_max(v in prop::collection::vec(-100.0f64..100.0, 1..50), r_frac in 0.0f64..1.0) {
        let r = 1 + ((v.len() - 1) as f64 * r_frac) as usize;
        let t = top_r_mean(&v, r).unwrap();
        let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mean_abs = v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
        prop_assert!(t <= max + 1e-9 && t >= mean_abs - 1e-9);
    }

    #[test]
    fn single_chart_pair_matches_lone_chart(batches in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..30)) {
        let v = EwmaChart::log_variance(0.2, 0.0, 0.7).unwrap();
        let mut lone = v.clone();
        let mut pair = ChartPair { a: None, v: Some(v) };
        for b in &batches {
            let Ok(theta) = log_variance(b) else { continue };
            let z = lone.update(theta);
            let r = pair.step(b).unwrap();
            prop_assert_eq!(r.z_v.unwrap().to_bits(), z.to_bits());
            prop_assert_eq!(r.alarm, lone.exceeds());
        }
    }
}
