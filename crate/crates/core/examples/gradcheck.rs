//! Finite-difference gradient checks for every layer of a preset and for
//! the whole model, at 64-bit.
//!
//! ```text
//! cargo run --release --example gradcheck -- [preset]
//! ```

use hcnn::experiment::gradcheck_preset;

fn main() -> hcnn::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "lenet-hcnn".into());
    let rows = gradcheck_preset(&name, 1e-4, 2, 0)?;
    for r in &rows {
        println!(
            "{:<10} {:<48} checked {:>4}  max rel err {:.2e}  {}",
            r.layer,
            r.kind,
            r.checked,
            r.max_rel_err,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
