//! Saves a model, reads the checkpoint back and checks the restored model
//! predicts the same logits.
//!
//! ```text
//! cargo run --release --example checkpoint -- [path]
//! ```

use hcnn::models::{preset, Model};
use hcnn::tensor::Tensor;
use hcnn::training::checkpoint;

fn main() -> hcnn::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("hcnn-example.ckpt").display().to_string());
    let path = std::path::Path::new(&path);
    let model = Model::<f32>::build(&preset("lenet-hcnn", &[28, 28, 1], 10, false)?)?;
    checkpoint::save(&model, path)?;

    let ck = checkpoint::read(path)?;
    println!("{}: version {:?}, {} tensors, architecture {}", path.display(), ck.version, ck.params.len(), ck.config.architecture);
    let restored: Model<f32> = ck.into_model()?;
    let x = Tensor::from_fn(&[4, 28, 28, 1], |i| ((i % 29) as f32) / 29.0);
    let diff = model.logits(&x)?.max_abs_diff(&restored.logits(&x)?);
    println!("max logit difference after reload: {diff:e}");
    Ok(())
}
