//! Sup-norm constancy test of every coefficient when one coefficient is
//! truly constant, and a test of a fully specified null curve.
//!
//! cargo run --release --example constancy_test

use clustervc::inference::test_specified;
use clustervc::pipeline::{constancy_tests, fit_all};
use clustervc::simulation::{generate_dataset, SimConfig, TruthFn};
use clustervc::CoefId;

fn main() -> clustervc::Result<()> {
    let mut sim = SimConfig::standard();
    sim.truth.set(CoefId::Alpha { k: 2, j: 3 }, TruthFn::Constant(-0.4))?;
    let s = generate_dataset(&sim, 5)?;
    let fitted = fit_all(&s.data, &sim.fit_config(0.15))?;

    for t in constancy_tests(&fitted, 0.05)? {
        println!(
            "{:<10} C = {:>7.3}  T = {:>7.3}  p = {:.4}  {}",
            t.coefficient.to_string(),
            t.constant.unwrap_or(f64::NAN),
            t.statistic,
            t.p_value,
            if t.reject { "reject" } else { "accept" }
        );
    }

    let id = CoefId::Alpha { k: 0, j: 1 };
    let truth = s.truth.get(id).unwrap().clone();
    let t = test_specified(&fitted.curves, &fitted.inference, id, |u| truth.eval(u), 0.05)?;
    println!("\nH0: {id} = true curve: T = {:.3}, p = {:.4}", t.statistic, t.p_value);
    Ok(())
}
