//! Monte Carlo checks of the generator and of the standard-error estimators.

use clustervc::inference::{estimate_variance, jackknife_se};
use clustervc::local::{averaging_window, ObservationFits};
use clustervc::simulation::{
    generate_dataset, mise_study, replicate_rng, rmise_study, ClusterSize, RmiseConfig, SimConfig,
    SimTruth, TruthFn,
};
use clustervc::varcomp::{residuals_from_theta, variance_components};
use clustervc::{fit_curves, local_fit, CoefId, Degree};

fn normal_upper_tail(x: f64) -> f64 {
    // Simpson on [x, x + 12] of the standard normal density.
    let n = 20_000;
    let h = 12.0 / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(x) + pdf(x + 12.0);
    for i in 1..n {
        s += pdf(x + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn mean_cluster_size_matches_its_expectation() {
    // E floor(|2 xi| + 6) = 6 + sum_k P(|xi| >= k / 2).
    let expected = 6.0 + (1..40).map(|k| 2.0 * normal_upper_tail(k as f64 / 2.0)).sum::<f64>();
    assert!((expected - 7.1292).abs() < 1e-3, "{expected}");
    let rule = ClusterSize::AbsNormal { base: 6.0, scale: 2.0 };
    let mut rng = replicate_rng(11, 0);
    let draws: Vec<usize> = (0..100_000).map(|_| rule.draw(&mut rng)).collect();
    let mean = draws.iter().sum::<usize>() as f64 / draws.len() as f64;
    assert!((mean - expected).abs() < 0.02, "{mean} vs {expected}");
    assert!(draws.iter().all(|&n| n >= 6));
}

#[test]
fn noiseless_constant_truth_has_zero_mise() {
    let sim = SimConfig {
        sigma: 0.0,
        random_effect_cov: vec![vec![0.0; 3]; 3],
        truth: SimTruth::constant(3, 2, 0.7),
        ..SimConfig::standard()
    };
    let r = mise_study(&sim, &sim.fit_config(0.15), 2).unwrap();
    assert_eq!(r.succeeded, 2);
    assert!(r.mise.iter().all(|v| *v < 1e-10), "{:?}", r.mise);
    assert!(r.mse_sigma2 < 1e-20);
}

#[test]
fn less_noise_gives_smaller_mise() {
    let sim = SimConfig::standard();
    let quiet = SimConfig {
        sigma: 0.25,
        random_effect_cov: vec![vec![0.125, 0.0, 0.0], vec![0.0, 0.125, 0.0], vec![0.0, 0.0, 0.125]],
        ..SimConfig::standard()
    };
    let cfg = sim.fit_config(0.15);
    let loud = mise_study(&sim, &cfg, 100).unwrap();
    let calm = mise_study(&quiet, &cfg, 100).unwrap();
    for (id, (a, b)) in loud.coefficients.iter().zip(loud.mise.iter().zip(&calm.mise)) {
        assert!(b < a, "{id}: {b} not below {a}");
    }
}

#[test]
fn loss_ratio_is_one_when_estimators_coincide() {
    // One cluster, q = 0: the structured fit is the per-cluster fit.
    let sim = SimConfig {
        m: 1,
        cluster_size: ClusterSize::Fixed(60),
        random_effect_cov: vec![vec![0.0]],
        truth: SimTruth {
            alpha: vec![vec![TruthFn::Sin2Pi]],
            beta: vec![],
            intercept: None,
        },
        ..SimConfig::standard()
    };
    let rc = RmiseConfig {
        bandwidths: vec![0.3],
        reps: 3,
        ..RmiseConfig::default()
    };
    let r = rmise_study(&sim, &rc).unwrap();
    assert!((r.points[0].rmise_a - 1.0).abs() < 1e-12, "{:?}", r.points);
}

#[test]
fn pointwise_se_matches_monte_carlo_spread() {
    let sim = SimConfig::standard();
    let cfg = sim.fit_config(0.15);
    let idx = 3; // alpha_1_1
    let reps = 200;
    let mut est = Vec::with_capacity(reps);
    let mut se = Vec::with_capacity(reps);
    for r in 0..reps as u64 {
        let s = generate_dataset(&sim, r).unwrap();
        let mut grid_cfg = cfg.clone();
        grid_cfg.grid.count = 2;
        let curves = fit_curves(&s.data, &grid_cfg).unwrap();
        let obs = ObservationFits::compute(&curves, &s.data).unwrap();
        let vc = variance_components(&s.data, &residuals_from_theta(&s.data, curves.layout, &obs.theta)).unwrap();
        est.push(local_fit(&s.data, 0.5, &cfg, Degree::Linear).unwrap().theta[idx]);
        se.push(estimate_variance(&s.data, &cfg, 0.5, &vc).unwrap().se(idx));
    }
    let mean = est.iter().sum::<f64>() / reps as f64;
    let sd = (est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    let avg_se = se.iter().sum::<f64>() / reps as f64;
    assert!((avg_se / sd - 1.0).abs() < 0.25, "se {avg_se} vs sd {sd}");
}

#[test]
fn jackknife_se_matches_monte_carlo_spread() {
    let id = CoefId::Alpha { k: 1, j: 1 };
    let mut sim = SimConfig::standard();
    sim.truth.set(id, TruthFn::Constant(0.5)).unwrap();
    let cfg = sim.fit_config(0.15);
    let c_hat = |r: u64| {
        let s = generate_dataset(&sim, r).unwrap();
        let curves = fit_curves(&s.data, &cfg).unwrap();
        let obs = ObservationFits::compute(&curves, &s.data).unwrap();
        obs.constants(averaging_window(&s.data, &cfg).unwrap()).unwrap()[3]
    };
    let values: Vec<f64> = (0..100).map(c_hat).collect();
    let mean = values.iter().sum::<f64>() / 100.0;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    let jk: Vec<f64> = (0..5)
        .map(|r| {
            let s = generate_dataset(&sim, 1000 + r).unwrap();
            jackknife_se(&s.data, &cfg, &[id]).unwrap()[0].se
        })
        .collect();
    let avg = jk.iter().sum::<f64>() / jk.len() as f64;
    assert!((avg / sd - 1.0).abs() < 0.5, "jackknife {avg} vs Monte Carlo {sd}");
}
