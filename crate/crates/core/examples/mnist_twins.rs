//! Trains `lenet-hcnn` and its Euclidean twin on the shipped MNIST subset
//! with the same budget and prints per-epoch test accuracy.
//!
//! ```text
//! cargo run --release --example mnist_twins -- [epochs] [curvature]
//! ```

use hcnn::data::{load_mnist, resolve_data_dir, MnistSplit};
use hcnn::manifold::Curvature;
use hcnn::models::{euclidean_twin, preset, Model};
use hcnn::training::{train, OptimizerConfig, Split, TrainConfig};

fn main() -> hcnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(3, |s| s.parse().expect("epochs"));
    let k: f64 = args.next().map_or(-1.0, |s| s.parse().expect("curvature"));

    let dir = resolve_data_dir(None).join("mnist");
    let train_set = load_mnist::<f32>(&dir, MnistSplit::Train)?;
    let test_set = load_mnist::<f32>(&dir, MnistSplit::Test)?;

    let mut cfg = preset("lenet-hcnn", &[28, 28, 1], 10, false)?;
    cfg.curvature = Curvature::new(k)?;
    let mut tc = TrainConfig::new(epochs, 64, OptimizerConfig::adam(1e-3));
    tc.detect_anomaly = true;
    tc.eval_train = false;

    for cfg in [cfg.clone(), euclidean_twin(&cfg)] {
        let mut model = Model::<f32>::build(&cfg)?;
        println!("{} ({} params)", cfg.architecture, model.num_params());
        let rec = train(&mut model, &train_set, Some(&test_set), &tc, |m| {
            if m.split == Split::Test {
                println!("  epoch {:>2}  test acc {:.4}  loss {:.4}  {:.0}s", m.epoch, m.accuracy, m.loss, m.wall_seconds);
            }
        })?;
        println!("  nan events: {}", rec.nan_events);
    }
    Ok(())
}
