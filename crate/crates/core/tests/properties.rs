mod common;

use clustervc::inference::{
    bias_with_derivatives, confidence_band, critical_value, grid_inference, gumbel_p_value,
    test_specified,
};
use clustervc::io::{read_csv, write_dataset};
use clustervc::local::ObservationFits;
use clustervc::simulation::{generate_dataset, SimConfig};
use clustervc::varcomp::{residuals_from_theta, variance_components};
use clustervc::{
    fit_curves, local_fit, CoefId, Cluster, ClusterDataset, Degree, FitConfig, Kernel,
    Observation,
};
use common::{random_instance, rel_diff};
use proptest::prelude::*;

fn instance_cfg(seed: u64) -> (ClusterDataset, FitConfig, f64) {
    let inst = random_instance(seed);
    let cfg = FitConfig {
        kernel: inst.kernel.clone(),
        h_pilot: Some(inst.h_pilot),
        min_local_obs_factor: 1.0,
        intercept: inst.intercept,
        ..FitConfig::with_bandwidth(inst.h)
    };
    (inst.data, cfg, inst.u0)
}

fn map_y(data: &ClusterDataset, f: impl Fn(usize, &Observation) -> f64) -> ClusterDataset {
    let mut r = 0;
    let clusters = data
        .clusters()
        .iter()
        .map(|c| {
            let obs = c
                .obs
                .iter()
                .map(|o| {
                    let y = f(r, o);
                    r += 1;
                    Observation { y, ..o.clone() }
                })
                .collect();
            Cluster::new(c.id.clone(), c.z.clone(), obs)
        })
        .collect();
    ClusterDataset::new(clusters).unwrap()
}

fn small_sim(seed: u64) -> (ClusterDataset, FitConfig) {
    let sim = SimConfig {
        m: 40,
        seed,
        ..SimConfig::standard()
    };
    let mut cfg = sim.fit_config(0.25);
    cfg.grid.count = 21;
    (generate_dataset(&sim, 0).unwrap().data, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn local_fit_is_linear_in_y(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (data, cfg, u0) = instance_cfg(seed);
        let other = map_y(&data, |r, o| (r as f64 * 0.37).sin() + o.u);
        let mixed = map_y(&data, |r, o| {
            a * o.y + b * ((r as f64 * 0.37).sin() + o.u)
        });
        let f1 = local_fit(&data, u0, &cfg, Degree::Linear).unwrap().theta;
        let f2 = local_fit(&other, u0, &cfg, Degree::Linear).unwrap().theta;
        let f3 = local_fit(&mixed, u0, &cfg, Degree::Linear).unwrap().theta;
        let expect: Vec<f64> = f1.iter().zip(&f2).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(rel_diff(&f3, &expect) < 1e-9 || expect.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rows_outside_support_do_not_matter(seed in 0u64..1000, shift in -100.0f64..100.0) {
        let (data, mut cfg, u0) = instance_cfg(seed);
        cfg.h = 0.45;
        let moved = map_y(&data, |_, o| if (o.u - u0).abs() >= cfg.h { o.y + shift } else { o.y });
        let a = local_fit(&data, u0, &cfg, Degree::Linear);
        let b = local_fit(&moved, u0, &cfg, Degree::Linear);
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert_eq!(a.theta, b.theta);
        }
    }

    #[test]
    fn cluster_order_does_not_matter(seed in 0u64..1000) {
        let (data, cfg, u0) = instance_cfg(seed);
        let mut clusters = data.clusters().to_vec();
        clusters.reverse();
        let rev = ClusterDataset::new(clusters).unwrap();
        let a = local_fit(&data, u0, &cfg, Degree::Linear).unwrap().theta;
        let b = local_fit(&rev, u0, &cfg, Degree::Linear).unwrap().theta;
        prop_assert!(rel_diff(&a, &b) < 1e-10);
    }

    #[test]
    fn rescaling_u_and_h_together_leaves_fit_unchanged(seed in 0u64..1000, c in 0.2f64..5.0) {
        let (data, cfg, u0) = instance_cfg(seed);
        let clusters = data
            .clusters()
            .iter()
            .map(|cl| {
                let obs = cl.obs.iter().map(|o| Observation { u: o.u * c, ..o.clone() }).collect();
                Cluster::new(cl.id.clone(), cl.z.clone(), obs)
            })
            .collect();
        let scaled = ClusterDataset::new(clusters).unwrap();
        let cfg2 = FitConfig { h: cfg.h * c, ..cfg.clone() };
        let a = local_fit(&data, u0, &cfg, Degree::Linear).unwrap();
        let b = local_fit(&scaled, u0 * c, &cfg2, Degree::Linear).unwrap();
        prop_assert!(rel_diff(&b.theta, &a.theta) < 1e-8);
        let d: Vec<f64> = b.derivs[0].iter().map(|v| v * c).collect();
        prop_assert!(rel_diff(&d, &a.derivs[0]) < 1e-7);
    }

    #[test]
    fn kernels_are_even(t in -1.5f64..1.5) {
        let tab = clustervc::TabulatedKernel::new(1.0, vec![1.0, 0.8, 0.3, 0.0]).unwrap();
        for k in [Kernel::Epanechnikov, Kernel::Uniform, Kernel::Triweight, Kernel::Tabulated(tab)] {
            prop_assert_eq!(k.eval(t), k.eval(-t));
            prop_assert!(k.eval(t) >= 0.0);
        }
    }

    #[test]
    fn gumbel_decision_matches_p_value(t in -5.0f64..15.0, alpha in 0.001f64..0.999) {
        prop_assert_eq!(t > critical_value(alpha), gumbel_p_value(t) < alpha);
    }

    #[test]
    fn bias_is_linear_in_pilot_derivatives(seed in 0u64..1000, a in -2.0f64..2.0) {
        let (data, cfg, u0) = instance_cfg(seed);
        let fit = local_fit(&data, u0, &cfg, Degree::Linear).unwrap();
        let layout = cfg.layout(&data);
        let s = layout.s();
        let d1: Vec<f64> = (0..s).map(|i| (i as f64 + 1.0).sin()).collect();
        let d2: Vec<f64> = (0..s).map(|i| (i as f64 * 0.5).cos()).collect();
        let zero = vec![0.0; s];
        let both = bias_with_derivatives(&data, layout, &fit, &d1, &d2).values;
        let mixed: Vec<f64> = d1.iter().map(|v| a * v).collect();
        let scaled = bias_with_derivatives(&data, layout, &fit, &mixed, &zero).values;
        let only1 = bias_with_derivatives(&data, layout, &fit, &d1, &zero).values;
        let only2 = bias_with_derivatives(&data, layout, &fit, &zero, &d2).values;
        let sum: Vec<f64> = only1.iter().zip(&only2).map(|(x, y)| x + y).collect();
        prop_assert!(rel_diff(&both, &sum) < 1e-12);
        let expect: Vec<f64> = only1.iter().map(|v| a * v).collect();
        prop_assert!(rel_diff(&scaled, &expect) < 1e-12 || a == 0.0);
    }

    #[test]
    fn csv_round_trip(values in prop::collection::vec(-1e6f64..1e6, 12)) {
        let clusters = vec![
            Cluster::new("a", vec![values[0]], vec![
                Observation { y: values[1], u: 0.0, x: vec![values[2], values[3]] },
                Observation { y: values[4], u: 1.0, x: vec![values[5], values[6]] },
            ]),
            Cluster::new("b,\"q\"", vec![values[7]], vec![
                Observation { y: values[8], u: values[9].abs() / 1e6, x: vec![values[10], values[11]] },
            ]),
        ];
        let d = ClusterDataset::new(clusters).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), d);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn bands_nest_and_sup_is_attained(seed in 0u64..1000, a1 in 0.005f64..0.05, gap in 0.01f64..0.3) {
        let (data, cfg) = small_sim(seed);
        let curves = fit_curves(&data, &cfg).unwrap();
        let obs = ObservationFits::compute(&curves, &data).unwrap();
        let vc = variance_components(&data, &residuals_from_theta(&data, curves.layout, &obs.theta)).unwrap();
        let inf = grid_inference(&data, &curves, &vc).unwrap();
        let id = CoefId::Alpha { k: 0, j: 1 };
        let wide = confidence_band(&curves, &inf, id, a1).unwrap();
        let narrow = confidence_band(&curves, &inf, id, a1 + gap).unwrap();
        for g in 0..wide.u.len() {
            prop_assert!(wide.lower()[g] <= narrow.lower()[g]);
            prop_assert!(wide.upper()[g] >= narrow.upper()[g]);
            prop_assert!(wide.lower()[g] <= wide.center[g] && wide.center[g] <= wide.upper()[g]);
        }
        let t = test_specified(&curves, &inf, id, |u| (2.0 * std::f64::consts::PI * u).sin(), 0.05).unwrap();
        let g = curves.grid.iter().position(|u| *u == t.sup_u);
        prop_assert!(g.is_some());
        let g = g.unwrap();
        let dev = (wide.estimate[g] - (2.0 * std::f64::consts::PI * t.sup_u).sin() - wide.bias[g]).abs() / wide.se[g];
        prop_assert!((dev - t.sup_deviation).abs() <= 1e-12 * dev.max(1.0));
    }

    #[test]
    fn specified_test_is_translation_equivariant(seed in 0u64..1000, delta in -2.0f64..2.0) {
        let (data, cfg) = small_sim(seed);
        let id = CoefId::Alpha { k: 0, j: 1 };
        let stat = |d: &ClusterDataset, shift: f64| {
            let curves = fit_curves(d, &cfg).unwrap();
            let obs = ObservationFits::compute(&curves, d).unwrap();
            let vc = variance_components(d, &residuals_from_theta(d, curves.layout, &obs.theta)).unwrap();
            let inf = grid_inference(d, &curves, &vc).unwrap();
            test_specified(&curves, &inf, id, |u| u * u + shift, 0.05).unwrap().statistic
        };
        let shifted = map_y(&data, |_, o| o.y + delta * o.x[0]);
        let a = stat(&data, 0.0);
        let b = stat(&shifted, delta);
        prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{} vs {}", a, b);
    }
}
