//! Loss ratio of the structured estimator of each cluster's coefficient
//! functions against separate per-cluster fits, over a bandwidth sweep.
//!
//! cargo run --release --example rmise_study -- [reps] [trimmed|full]

use clustervc::simulation::{rmise_study, RmiseConfig, SimConfig};

fn main() -> clustervc::Result<()> {
    let mut args = std::env::args().skip(1);
    let reps: usize = args.next().map_or(20, |a| a.parse().expect("reps"));
    let trim = args.next().is_some_and(|a| a == "trimmed");

    let sim = SimConfig::standard().loss_ratio_design(50);
    let rc = RmiseConfig {
        reps,
        trim,
        ..RmiseConfig::default()
    };
    let report = rmise_study(&sim, &rc)?;
    println!("{:>6} {:>10} {:>10} {:>8}", "h", "RMISE(a)", "RMISE(b)", "dropped");
    for pt in &report.points {
        println!(
            "{:>6.2} {:>10.4} {:>10.4} {:>8.4}",
            pt.h, pt.rmise_a, pt.rmise_beta, pt.dropped_fraction
        );
    }
    Ok(())
}
