//! Builds an experiment config from a preset with dotted overrides and runs
//! a small curvature sweep into a temporary directory.
//!
//! ```text
//! cargo run --release --example config_sweep
//! ```

use hcnn::experiment::{sweep, ExperimentConfig, RunOptions};

fn main() -> hcnn::Result<()> {
    let base = ExperimentConfig::preset("mlr-only", false)?.with_overrides(&["epochs=10", "train.optimizer.lr=0.05"])?;
    println!("config digest {}", base.digest());
    let out = std::env::temp_dir().join("hcnn-sweep-example");
    let opts = RunOptions { out, data_dir: None };
    let values: Vec<String> = ["-0.5", "-1", "-2"].iter().map(|s| s.to_string()).collect();
    for (k, outcome) in sweep(&base, "K", &values, false, &opts)? {
        let o = outcome?;
        println!("K={k:>4}: test accuracy {:.3} -> {}", o.summary.final_test_acc, o.dir.display());
    }
    Ok(())
}
