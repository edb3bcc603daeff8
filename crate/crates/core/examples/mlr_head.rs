//! The Lorentz MLR head: class hyperplanes from `(z, a)`, signed distances
//! and the logits built from them.
//!
//! ```text
//! cargo run --release --example mlr_head
//! ```

use hcnn::autograd::Tape;
use hcnn::layers::{hyperplane_normal, lorentz_mlr};
use hcnn::manifold::Lorentz;
use hcnn::tensor::Tensor;

fn main() -> hcnn::Result<()> {
    let k = -1.0;
    let m = Lorentz::<f64>::with_k(k)?;
    let tape = Tape::inference();
    let z = tape.constant(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 2.0])?);
    let a = tape.constant(Tensor::from_f64(&[2], &[0.5, -0.25])?);
    let w = hyperplane_normal(&m, z, a)?;
    println!("hyperplane normals {:?}", w.value().data());

    let x = m.project(tape.constant(Tensor::from_f64(&[3, 2], &[0.0, 0.0, 1.0, 0.3, -0.5, -1.0])?))?;
    let logits = lorentz_mlr(&m, x, z, a)?.value();
    let zn = [1.0, 2.0];
    for (i, row) in logits.data().chunks(2).enumerate() {
        let dist: Vec<String> = row.iter().zip(zn).map(|(l, n)| format!("{:+.4}", l / n)).collect();
        println!("x{i}: logits {row:.4?}, signed distances [{}]", dist.join(", "));
    }
    Ok(())
}
