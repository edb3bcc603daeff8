//! Points, distances, exp/log maps, parallel transport and centroids on
//! the hyperboloid, with a Poincaré-ball view of the result.
//!
//! ```text
//! cargo run --release --example geometry
//! ```

use hcnn::manifold::{Curvature, LorentzPoint, TangentVector};
use hcnn::tensor::Tensor;

fn main() -> hcnn::Result<()> {
    let k = Curvature::new(-1.0)?;
    let pts = LorentzPoint::from_space(&Tensor::from_f64(&[3, 2], &[0.5, 0.0, -0.3, 0.8, 1.2, -0.4])?, k)?;
    println!("points (time first):\n{:?}", pts.values().data());

    let origin = LorentzPoint::<f64>::origin(2, k);
    let first = LorentzPoint::new(pts.values().narrow(0, 0, 1)?, k)?;
    println!("d(origin, p0) = {:.6}", origin.distance(&first)?.item());

    // log then exp returns to the same point
    let v = origin.log(&first)?;
    let back = origin.exp(&v)?;
    println!("exp(log(p0)) - p0 = {:.2e}", back.values().max_abs_diff(first.values()));

    // transport keeps the Minkowski norm
    let u = TangentVector::at_origin(&Tensor::from_f64(&[1, 2], &[0.3, -0.7])?)?;
    let moved = origin.transport(&first, &u)?;
    println!("|u| = {:.6}, |transported u| = {:.6}", u.norm()[0], moved.norm()[0]);

    let mu = pts.centroid(Some(&Tensor::from_f64(&[3], &[1.0, 2.0, 1.0])?))?;
    println!("weighted centroid {:?}", mu.values().data());
    println!("in the Poincaré ball {:?}", mu.to_poincare()?.data());
    Ok(())
}
