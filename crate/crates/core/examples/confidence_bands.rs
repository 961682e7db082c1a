//! Bias-corrected simultaneous band for one coefficient, written as CSV.
//!
//! cargo run --release --example confidence_bands -- [out.csv]

use clustervc::inference::confidence_band;
use clustervc::io::curves_csv;
use clustervc::pipeline::fit_all;
use clustervc::simulation::{generate_dataset, SimConfig};
use clustervc::CoefId;

fn main() -> clustervc::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "band.csv".into());
    let sim = SimConfig::standard();
    let s = generate_dataset(&sim, 0)?;
    let fitted = fit_all(&s.data, &sim.fit_config(0.15))?;
    let id = CoefId::Alpha { k: 0, j: 1 };
    let band = confidence_band(&fitted.curves, &fitted.inference, id, 0.05)?;

    let truth = s.truth.get(id).unwrap();
    println!(
        "{} band: multiplier {:.4}, omega_n {:.4}, covers truth: {}",
        id,
        band.multiplier,
        band.omega_n,
        band.covers(|u| truth.eval(u))
    );
    std::fs::write(&out, curves_csv(&[band])?).expect("write band");
    println!("wrote {out}");
    Ok(())
}
