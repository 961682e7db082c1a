//! Local-linear estimates of the coefficient curves on one simulated
//! dataset, compared with the truth at a few points.
//!
//! cargo run --release --example local_fit

use clustervc::simulation::{generate_dataset, SimConfig};
use clustervc::{fit_curves, local_fit, CoefId, Degree};

fn main() -> clustervc::Result<()> {
    let sim = SimConfig::standard();
    let s = generate_dataset(&sim, 0)?;
    let cfg = sim.fit_config(0.15);
    println!("n = {}, m = {}, p = {}, q = {}", s.data.n(), s.data.m(), s.data.p(), s.data.q());

    let fit = local_fit(&s.data, 0.5, &cfg, Degree::Linear)?;
    println!(
        "fit at u = 0.5 uses {} rows, condition {:.2e}",
        fit.support(),
        fit.condition
    );

    let curves = fit_curves(&s.data, &cfg)?;
    let ids = [CoefId::Alpha { k: 0, j: 1 }, CoefId::Alpha { k: 1, j: 2 }, CoefId::Beta(1)];
    println!("interval [{:.3}, {:.3}]", curves.interval.0, curves.interval.1);
    println!("{:>7} {}", "u", ids.map(|id| format!("{:>22}", format!("{id} (true)"))).join(""));
    for g in (0..curves.grid.len()).step_by(10) {
        let u = curves.grid[g];
        let truth = s.truth.theta(u);
        let cells: String = ids
            .iter()
            .map(|id| {
                let i = curves.layout.index(*id).unwrap();
                format!("{:>13.4} ({:>6.3})", curves.fits[g].theta[i], truth[i])
            })
            .collect();
        println!("{u:>7.3} {cells}");
    }
    Ok(())
}
