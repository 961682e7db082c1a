//! Averaged constant estimates with leave-one-cluster-out standard errors.
//!
//! cargo run --release --example jackknife_constants

use clustervc::inference::jackknife_se;
use clustervc::simulation::{generate_dataset, SimConfig, SimTruth};

fn main() -> clustervc::Result<()> {
    let sim = SimConfig {
        truth: SimTruth::constant(3, 2, 0.5),
        ..SimConfig::standard()
    };
    let s = generate_dataset(&sim, 0)?;
    let cfg = sim.fit_config(0.15);
    let ids = cfg.layout(&s.data).ids();
    for c in jackknife_se(&s.data, &cfg, &ids)? {
        println!("{:<10} {:>8.4}  se {:.4}", c.coefficient.to_string(), c.value, c.se);
    }
    Ok(())
}
