//! Runs every registered finite-difference gradient check and prints the
//! worst relative error of each.
//!
//! ```text
//! cargo run --release --example gradcheck
//! ```

use fuseformer::gradcheck::{registry, worst, CheckOptions};

fn main() -> fuseformer::Result<()> {
    let opts = CheckOptions::default();
    for target in registry() {
        let report = (target.run)(&opts)?;
        if let Some(w) = worst(&report) {
            let verdict = if w.rel_err < target.threshold { "ok" } else { "FAIL" };
            println!(
                "{:<28} {:<5} {:.2e} < {:.0e} {verdict} ({})",
                target.name, target.scope, w.rel_err, target.threshold, w.name
            );
        }
    }
    Ok(())
}
