//! Trains the MLR-only model on the two-class wrapped Gaussian mixture and
//! compares it with the nearest-mean rule.
//!
//! ```text
//! cargo run --release --example mixture
//! ```

use hcnn::data::{nearest_mean_predict, wrapped_mixture, MixtureSpec};
use hcnn::models::{preset, Model};
use hcnn::training::{train, OptimizerConfig, Split, TrainConfig};

fn main() -> hcnn::Result<()> {
    let spec = MixtureSpec::default();
    let data = wrapped_mixture(&spec)?;
    let baseline = nearest_mean_predict(&data.inputs, &spec.means()?, spec.curvature)?;
    let hits = baseline.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    println!("nearest-mean accuracy {:.3}", hits as f64 / data.len() as f64);

    // batches carry the space coordinates; the model lifts them itself
    let data = data.cast::<f32>();
    let mut model = Model::<f32>::build(&preset("mlr-only", &[spec.dim], spec.classes, false)?)?;
    let cfg = TrainConfig::new(20, 32, OptimizerConfig::sgd(0.1, 0.0));
    train(&mut model, &data, None, &cfg, |m| {
        if m.split == Split::Train && m.epoch % 5 == 0 {
            println!("epoch {:>3}: loss {:.4}, train accuracy {:.3}", m.epoch, m.loss, m.accuracy);
        }
    })?;
    Ok(())
}
