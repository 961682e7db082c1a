//! Monte Carlo MISE of the coefficient curves and MSE of the variance
//! components under the standard simulation design.
//!
//! cargo run --release --example mise_study -- [reps] [h] [trimmed|full]

use clustervc::simulation::{mise_study, SimConfig};

fn main() -> clustervc::Result<()> {
    let mut args = std::env::args().skip(1);
    let reps: usize = args.next().map_or(100, |a| a.parse().expect("reps"));
    let h: f64 = args.next().map_or(0.15, |a| a.parse().expect("h"));

    let full_range = args.next().is_some_and(|a| a == "full");

    let sim = SimConfig::standard();
    let mut cfg = sim.fit_config(h);
    cfg.trim = !full_range;
    let report = mise_study(&sim, &cfg, reps)?;
    println!(
        "{} of {} replicates succeeded, h = {}, {}",
        report.succeeded, report.replicates, report.h, report.integration
    );
    for (id, v) in report.coefficients.iter().zip(&report.mise) {
        println!("MISE {id:<10} {v:.4}");
    }
    for (label, v) in report.sigma_labels.iter().zip(&report.mse_sigma) {
        println!("MSE  {label:<10} {v:.4}");
    }
    println!("MSE  sigma2     {:.4}", report.mse_sigma2);
    Ok(())
}
