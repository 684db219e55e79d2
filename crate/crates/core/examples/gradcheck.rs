//! Compare every registered analytic gradient against central finite
//! differences and print one line per operation.
//!
//! `cargo run --example gradcheck`

use ddr::config::GradcheckOptions;
use ddr::gradcheck::run_gradcheck;

fn main() -> anyhow::Result<()> {
    let summary = run_gradcheck(&GradcheckOptions::default())?;
    for op in &summary.ops {
        println!(
            "{:<4} {:<16} {:>3} points  max rel error {:.2e} (tol {:.0e})",
            if op.passed { "ok" } else { "FAIL" },
            op.name,
            op.points,
            op.max_rel_error,
            op.tolerance
        );
    }
    anyhow::ensure!(summary.passed(), "gradient check failed");
    Ok(())
}
