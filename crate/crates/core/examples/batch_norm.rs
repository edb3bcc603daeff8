//! Lorentz batch normalization: training batches re-center and re-scale
//! points about `beta`; running statistics take over in eval mode.
//!
//! ```text
//! cargo run --release --example batch_norm
//! ```

use hcnn::autograd::Tape;
use hcnn::layers::{Ctx, Layer, LorentzBatchNorm, ParamStore};
use hcnn::manifold::{Lorentz, VarianceMetric};
use hcnn::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hcnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = Lorentz::<f64>::with_k(-1.0)?;
    let mut store = ParamStore::new();
    let bn = LorentzBatchNorm::new(&mut store, "bn", 2, m)?;

    for step in 0..50 {
        let tape = Tape::inference();
        let space = Tensor::from_fn(&[32, 2], |i| 1.5 + rng.random_range(-0.6..0.6) * if i % 2 == 0 { 1.0 } else { 2.0 });
        let x = m.project(tape.constant(space))?;
        let mut ctx = Ctx::new(&tape, &store, true);
        let y = bn.forward(&mut ctx, x)?;
        if step % 10 == 0 {
            let origin = tape.constant(m.origin_tensor(2));
            let var_in = m.frechet_variance(x, bn.batch_stats(x.reshape(&[32, 1, 3])?)?.0, VarianceMetric::Geodesic)?;
            let var_out = m.frechet_variance(y, origin, VarianceMetric::Geodesic)?;
            println!("step {step:>2}: batch variance {:.4} -> {:.4} about beta", var_in.item(), var_out.item());
        }
        let updates = ctx.take_updates();
        store.apply_updates(updates);
    }
    println!("running mean {:?}", store.value(bn.running_mean).data());
    println!("running var  {:?}", store.value(bn.running_var).data());
    Ok(())
}
