//! Kernel moments and the Gumbel band constants for a few bandwidths.
//!
//! cargo run --example kernels

use clustervc::inference::{band_multiplier, critical_value, omega_n};
use clustervc::{Kernel, TabulatedKernel};

fn main() -> clustervc::Result<()> {
    let tabulated = TabulatedKernel::new(1.0, vec![1.0, 0.9, 0.6, 0.25, 0.0])?;
    let kernels = [
        ("epanechnikov", Kernel::Epanechnikov),
        ("uniform", Kernel::Uniform),
        ("triweight", Kernel::Triweight),
        ("tabulated", Kernel::Tabulated(tabulated)),
    ];
    println!("{:<14} {:>8} {:>8} {:>8} {:>8}", "kernel", "mu2", "nu0", "dk2", "K(c0)");
    for (name, k) in &kernels {
        let m = k.moments()?;
        println!("{name:<14} {:>8.5} {:>8.5} {:>8.5} {:>8.5}", m.mu2, m.nu0, m.dk2, m.k_at_c0);
    }

    println!("\nc_0.05 = {:.4}", critical_value(0.05));
    println!("{:<14} {:>6} {:>8} {:>10}", "kernel", "h", "omega_n", "multiplier");
    for (name, k) in &kernels[..2] {
        let m = k.moments()?;
        for h in [0.05, 0.1, 0.15, 0.3] {
            println!(
                "{name:<14} {h:>6.2} {:>8.4} {:>10.4}",
                omega_n(&m, h, (0.0, 1.0))?,
                band_multiplier(&m, h, (0.0, 1.0), 0.05)?
            );
        }
    }
    Ok(())
}
