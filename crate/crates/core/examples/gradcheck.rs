//! Autodiff against central finite differences for every op, fusion head
//! and model variant.
//!
//! cargo run --release --example gradcheck

use deformfuse::selfcheck::{gradient_suite, GRADCHECK_THRESHOLD};

fn main() -> deformfuse::Result<()> {
    let reports = gradient_suite(0)?;
    for r in &reports {
        println!("{r}");
    }
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    println!("worst relative error {worst:.2e} (threshold {GRADCHECK_THRESHOLD:.0e})");
    Ok(())
}
