//! Empirical band coverage and constancy-test size and power.
//!
//! cargo run --release --example calibration -- [reps]

use clustervc::simulation::{calibration_study, CalibrationConfig, SimConfig};

fn main() -> clustervc::Result<()> {
    let reps: usize = std::env::args()
        .nth(1)
        .map_or(200, |a| a.parse().expect("reps"));

    let sim = SimConfig::standard();
    let cc = CalibrationConfig {
        reps,
        ..CalibrationConfig::default()
    };
    let r = calibration_study(&sim, &sim.fit_config(0.15), &cc)?;
    println!("coefficient {} at level {}, {} replicates", r.coefficient, r.alpha, r.replicates);
    println!("band coverage      {:.3}", r.coverage);
    println!("power (varying)    {:.3}", r.power);
    println!("size (constant {}) {:.3}", r.null_constant, r.size);
    Ok(())
}
