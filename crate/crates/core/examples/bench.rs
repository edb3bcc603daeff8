//! Times forward+backward of each layer kind against its Euclidean twin.
//!
//! ```text
//! cargo run --release --example bench -- [repeats]
//! ```

use hcnn::experiment::bench::{run, BenchOptions};

fn main() -> hcnn::Result<()> {
    let repeats = std::env::args().nth(1).map_or(20, |s| s.parse().expect("repeats"));
    let rows = run::<f32>(&BenchOptions {
        repeats,
        ..Default::default()
    })?;
    println!("{:<11} {:<11} {:<12} {:>10} {:>7}", "layer", "variant", "shape", "median ms", "ratio");
    for r in rows {
        println!("{:<11} {:<11} {:<12} {:>10.3} {:>7.2}", r.layer, format!("{:?}", r.variant), r.shape, r.median_ms, r.ratio);
    }
    Ok(())
}
