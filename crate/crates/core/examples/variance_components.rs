//! sigma^2 and Sigma from the residuals of the fitted curves, plus the
//! predicted random effects of the first clusters.
//!
//! cargo run --release --example variance_components

use clustervc::local::ObservationFits;
use clustervc::simulation::{generate_dataset, SimConfig};
use clustervc::varcomp::{residuals_from_theta, variance_components};
use clustervc::fit_curves;

fn main() -> clustervc::Result<()> {
    let sim = SimConfig::standard();
    let s = generate_dataset(&sim, 0)?;
    let curves = fit_curves(&s.data, &sim.fit_config(0.15))?;
    let obs = ObservationFits::compute(&curves, &s.data)?;
    let res = residuals_from_theta(&s.data, curves.layout, &obs.theta);
    let vc = variance_components(&s.data, &res)?;

    println!("sigma2_hat = {:.4} (true {})", vc.sigma2, sim.sigma * sim.sigma);
    println!("Sigma_hat (raw):");
    for row in &vc.sigma_raw {
        println!("  {}", row.iter().map(|v| format!("{v:>8.4}")).collect::<String>());
    }
    println!("excluded clusters: {:?}", vc.excluded);
    for i in 0..3 {
        if let Some(e) = &vc.e_hat[i] {
            println!("cluster {i}: e_hat = {e:.3?}  e = {:.3?}", s.e[i]);
        }
    }
    Ok(())
}
