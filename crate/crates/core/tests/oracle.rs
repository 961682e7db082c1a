mod common;

use common::oracle_differences;

#[test]
fn library_matches_dense_reference_on_random_instances() {
    let names = ["local_fit", "estimate_Sigma", "estimate_variance", "estimate_bias"];
    for seed in 0..100 {
        let d = oracle_differences(seed);
        for (name, v) in names.iter().zip(d) {
            assert!(v < 1e-8, "seed {seed}: {name} differs by {v:e}");
        }
    }
}

#[test]
fn gauss_solver_sanity() {
    let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
    let b = vec![vec![3.0], vec![5.0]];
    let x = common::gauss_solve(&a, &b);
    assert!((x[0][0] - 0.8).abs() < 1e-14 && (x[1][0] - 1.4).abs() < 1e-14);
}
