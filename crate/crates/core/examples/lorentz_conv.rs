//! Lorentz convolution and transposed convolution on a small feature map.
//! Every output position stays on the hyperboloid.
//!
//! ```text
//! cargo run --release --example lorentz_conv
//! ```

use hcnn::autograd::Tape;
use hcnn::layers::{ConvSpec, Ctx, Layer, LorentzConv2d, ParamStore};
use hcnn::manifold::Lorentz;
use hcnn::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hcnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = Lorentz::<f64>::with_k(-1.0)?;
    let mut store = ParamStore::new();
    let down = LorentzConv2d::new(&mut store, "down", ConvSpec::new(3, 8, 3, 2, 1), m, &mut rng)?;
    let up = LorentzConv2d::new(&mut store, "up", ConvSpec::new(8, 3, 4, 2, 1).transposed(), m, &mut rng)?;

    // a [2, 8, 8] map of points in L^3 lifted from random space parts
    let tape = Tape::inference();
    let space = Tensor::from_fn(&[2, 8, 8, 3], |_| rng.random_range(-1.0..1.0));
    let x = m.project(tape.constant(space))?;
    let mut ctx = Ctx::new(&tape, &store, false);
    let y = down.forward(&mut ctx, x)?;
    let z = up.forward(&mut ctx, y)?;
    for (name, v) in [("input", x), ("conv", y), ("transposed conv", z)] {
        println!("{name:>16}: shape {:?}, max residual {:.2e}", v.shape(), m.manifold_residual(&v.value()));
    }
    println!("{}\n{}", down.describe(), up.describe());
    Ok(())
}
