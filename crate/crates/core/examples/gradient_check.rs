//! Compares the U-Net's analytic gradients with central finite differences
//! computed in f64.

use callipaint::denoiser::{gradient_check, probe_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let report = gradient_check(&probe_config(), 0, 40, 1e-3)?;
    println!("{} parameters, {} probes", report.param_count, report.probes.len());
    for probe in report.probes.iter().take(10) {
        println!("{probe:?}");
    }
    println!("worst relative error {:.2e}", report.max_relative_error(1e-8));
    Ok(())
}
