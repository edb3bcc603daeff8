//! Acceptance checks. Every check prints one `ACCEPT PASS|FAIL` line to the
//! real stdout (bypassing the harness capture) and then asserts.
//!
//! Checks hold a global lock while they run so their wall-clock budgets are
//! measured without competing for the CPU.

use std::io::Write;
use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use hcnn::autograd::{GradcheckOptions, Tape};
use hcnn::data::{load_mnist, Dataset, MnistSplit};
use hcnn::experiment::{load_data, ExperimentConfig};
use hcnn::layers::{
    lorentz_mlr, softplus_inverse, Activation, ConvSpec, Ctx, Layer, LorentzBatchNorm, LorentzConv2d, ParamStore,
};
use hcnn::manifold::{Curvature, Lorentz};
use hcnn::models::{euclidean_twin, preset, LayerSpec, Model, ModelConfig, Projection};
use hcnn::real::Real;
use hcnn::tensor::Tensor;
use hcnn::training::{evaluate, train, OptimizerConfig, RunRecord, Split, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const KS: [f64; 4] = [-0.2, -0.5, -1.0, -2.0];

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(name: &str, pass: bool, detail: &str) {
    let line = format!("ACCEPT {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{name}: {detail}");
}

fn minner(x: &[f64], y: &[f64]) -> f64 {
    -x[0] * y[0] + x[1..].iter().zip(&y[1..]).map(|(a, b)| a * b).sum::<f64>()
}

fn normal(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `[sqrt(||s||^2 - 1/K), s]`.
fn lift(k: f64, s: &[f64]) -> Vec<f64> {
    let t = (s.iter().map(|v| v * v).sum::<f64>() - 1.0 / k).sqrt();
    std::iter::once(t).chain(s.iter().copied()).collect()
}

/// `|<x, x>_L - 1/K| / |1/K|`, in f64.
fn residual(k: f64, x: &[f64]) -> f64 {
    (minner(x, x) - 1.0 / k).abs() * k.abs()
}

fn max_residual(k: f64, x: &[f64], width: usize) -> f64 {
    x.chunks(width).map(|r| residual(k, r)).fold(0.0, f64::max)
}

fn dist(k: f64, x: &[f64], y: &[f64]) -> f64 {
    (k * minner(x, y)).max(1.0).acosh() / (-k).sqrt()
}

/// `[0, u]` carried from the origin to `x` by parallel transport.
fn tangent_at(k: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
    let s = (-k).sqrt();
    let v: Vec<f64> = std::iter::once(0.0).chain(u.iter().copied()).collect();
    let c = -k * minner(x, &v) / (1.0 + s * x[0]);
    let mut out: Vec<f64> = v.iter().zip(x).map(|(a, b)| a + c * b).collect();
    out[0] += c / s;
    out
}

fn tensor<T: Real>(shape: &[usize], v: &[f64]) -> Tensor<T> {
    Tensor::from_f64(shape, v).unwrap()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2(&d) / l2(b).max(1e-300)
}

#[test]
fn geometry_suite() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut r64, mut r32, mut explog, mut iso, mut tang) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut non_finite = 0usize;
    // exp at points far from the origin is bounded by the f32 storage of
    // x_t (about 2.4e-7 x_t^2), so it is measured relative to x_t^2
    let (mut r32exp, mut r32scaled) = (0.0f64, 0.0f64);
    for k in KS {
        let m = Lorentz::<f64>::with_k(k).unwrap();
        let m32 = Lorentz::<f32>::with_k(k as f32).unwrap();
        for _ in 0..1000 {
            let n = rng.random_range(1..=4);
            let space = normal(&mut rng, n, 1.0);
            let tape = Tape::<f64>::inference();
            let x = m.project(tape.constant(tensor(&[1, n], &space))).unwrap();
            let xv = x.value().data().to_vec();
            r64 = r64.max(residual(k, &xv));

            // exp then log at x, with a tangent of moderate length
            let v = tangent_at(k, &xv, &normal(&mut rng, n, 0.5));
            let y = m.exp(x, tape.constant(tensor(&[1, n + 1], &v))).unwrap();
            let yv = y.value().data().to_vec();
            r64 = r64.max(residual(k, &yv));
            let back = m.log(x, y).unwrap().value().data().to_vec();
            explog = explog.max(rel(&back, &v));

            // transport x -> y preserves the Minkowski norm and tangency
            let w = tangent_at(k, &xv, &normal(&mut rng, n, 1.0));
            let pw = m.transport(x, y, tape.constant(tensor(&[1, n + 1], &w))).unwrap().value().data().to_vec();
            let (nw, npw) = (minner(&w, &w).sqrt(), minner(&pw, &pw).max(0.0).sqrt());
            iso = iso.max((npw - nw).abs() / nw);
            tang = tang.max(minner(&yv, &pw).abs() / (l2(&yv) * l2(&pw)));

            // 32-bit: the same space coordinates and an origin exp map
            let t32 = Tape::<f32>::inference();
            t32.set_detect_anomaly(true);
            let x32 = m32.project(t32.constant(tensor(&[1, n], &space))).unwrap().value().to_f64_vec();
            r32 = r32.max(residual(k, &x32));
            let z = normal(&mut rng, n, 0.5);
            let e32 = m32.exp0(t32.constant(tensor(&[1, n], &z))).unwrap().value().to_f64_vec();
            r32 = r32.max(residual(k, &e32));
            let x32v = m32.project(t32.constant(tensor(&[1, n], &space))).unwrap();
            let v32 = tangent_at(k, &x32, &normal(&mut rng, n, 0.5));
            let y32 = m32.exp(x32v, t32.constant(tensor(&[1, n + 1], &v32))).unwrap().value().to_f64_vec();
            r32exp = r32exp.max(residual(k, &y32));
            r32scaled = r32scaled.max(residual(k, &y32) / (y32[0] * y32[0] * k.abs()).max(1.0));
            non_finite += t32.anomalies().len();
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = r64 <= 1e-10 && r32 <= 1e-5 && r32scaled <= 1e-5 && explog < 1e-5 && iso < 1e-5 && tang < 1e-5 && non_finite == 0 && secs < 60.0;
    verdict(
        "geometry",
        pass,
        &format!(
            "4000 trials: residual 64-bit {r64:.2e} (<=1e-10), 32-bit {r32:.2e} (<=1e-5), 32-bit exp at generic points \
             {r32scaled:.2e} relative to max(|1/K|, x_t^2) (<=1e-5; plain {r32exp:.1e}); exp/log {explog:.2e}, \
             transport norm {iso:.2e}, tangency {tang:.2e} (<1e-5); non-finite {non_finite}; {secs:.1}s (<60s)"
        ),
    );
}

/// Lorentzian-distance objective `sum nu_i (2/K - 2 <x_i, mu>_L)`.
fn centroid_objective(k: f64, pts: &[Vec<f64>], nu: &[f64], mu: &[f64]) -> f64 {
    pts.iter().zip(nu).map(|(x, w)| w * (2.0 / k - 2.0 * minner(x, mu))).sum()
}

/// Gradient descent with backtracking on the space coordinates of `mu`,
/// the time coordinate following from the constraint.
fn centroid_by_descent(k: f64, pts: &[Vec<f64>], nu: &[f64]) -> Vec<f64> {
    let n = pts[0].len() - 1;
    let f = |s: &[f64]| centroid_objective(k, pts, nu, &lift(k, s));
    let mut s = vec![0.0; n];
    for (x, w) in pts.iter().zip(nu) {
        for i in 0..n {
            s[i] += w * x[i + 1];
        }
    }
    let mut step = 1.0;
    for _ in 0..20_000 {
        let t = lift(k, &s)[0];
        let g: Vec<f64> = (0..n)
            .map(|i| pts.iter().zip(nu).map(|(x, w)| w * (2.0 * x[0] * s[i] / t - 2.0 * x[i + 1])).sum())
            .collect();
        let gn = l2(&g);
        if gn < 1e-13 {
            break;
        }
        let f0 = f(&s);
        step *= 2.0;
        loop {
            let cand: Vec<f64> = s.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            if f(&cand) <= f0 - 0.5 * step * gn * gn || step < 1e-20 {
                s = cand;
                break;
            }
            step *= 0.5;
        }
    }
    lift(k, &s)
}

#[test]
fn centroid_matches_descent() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut worst_abs) = (f64::NEG_INFINITY, 0.0f64);
    for i in 0..50 {
        let k = KS[i % 4];
        let count = 1 + i % 5;
        let pts: Vec<Vec<f64>> = (0..count).map(|_| lift(k, &normal(&mut rng, 2, 1.0))).collect();
        let nu: Vec<f64> = (0..count).map(|_| rng.random_range(0.1..1.0)).collect();
        let m = Lorentz::<f64>::with_k(k).unwrap();
        let tape = Tape::<f64>::inference();
        let flat: Vec<f64> = pts.concat();
        let c = m
            .centroid(tape.constant(tensor(&[count, 3], &flat)), 0, Some(tape.constant(tensor(&[count, 1], &nu))))
            .unwrap()
            .value()
            .data()
            .to_vec();
        let gd = centroid_by_descent(k, &pts, &nu);
        let gap = centroid_objective(k, &pts, &nu, &c) - centroid_objective(k, &pts, &nu, &gd);
        worst = worst.max(gap);
        worst_abs = worst_abs.max(gap.abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "centroid",
        worst < 1e-6 && secs < 120.0,
        &format!("50 instances: closed form minus descent objective <= {worst:.2e} (|gap| <= {worst_abs:.2e}, <1e-6); {secs:.1}s"),
    );
}

/// Hyperplane normal built directly from its defining formula.
fn normal_of(k: f64, z: &[f64], a: f64) -> Vec<f64> {
    let s = (-k).sqrt();
    let zn = l2(z);
    std::iter::once((s * a).sinh() * zn).chain(z.iter().map(|v| (s * a).cosh() * v)).collect()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[test]
fn hyperplane_distance_matches_dense_sampling() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_formula, mut worst_layer, mut off_plane) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..100 {
        let k = KS[i % 4];
        let s = (-k).sqrt();
        let z = normal(&mut rng, 2, 1.0);
        let a = rng.random_range(-1.0..1.0);
        let x = lift(k, &normal(&mut rng, 2, 1.0));
        let w = normal_of(k, &z, a);
        let wn = minner(&w, &w).sqrt();
        let formula = (s * minner(&w, &x).abs() / wn).asinh() / s;

        // the layer's logit is the signed distance scaled by ||z||
        let m = Lorentz::<f64>::with_k(k).unwrap();
        let tape = Tape::<f64>::inference();
        let logit = lorentz_mlr(
            &m,
            tape.constant(tensor(&[1, 3], &x)),
            tape.constant(tensor(&[1, 2], &z)),
            tape.constant(tensor(&[1], &[a])),
        )
        .unwrap()
        .item();
        let layer = logit.abs() / l2(&z);

        // the hyperplane in L^2 is the geodesic through p with direction u
        let zn = l2(&z);
        let p = [(s * a).cosh() / s, (s * a).sinh() * z[0] / (s * zn), (s * a).sinh() * z[1] / (s * zn)];
        let j = |v: [f64; 3]| [-v[0], v[1], v[2]];
        let mut u = cross(j(p), j([w[0], w[1], w[2]]));
        let un = minner(&u, &u).sqrt();
        u.iter_mut().for_each(|c| *c /= un);
        let on = |t: f64| -> [f64; 3] {
            let (c, sh) = ((s * t).cosh(), (s * t).sinh() / s);
            [c * p[0] + sh * u[0], c * p[1] + sh * u[1], c * p[2] + sh * u[2]]
        };
        let reach = dist(k, &x, &p) + 1.0;
        let samples = 100_000;
        let (mut best_t, mut best) = (0.0, f64::INFINITY);
        for q in 0..=samples {
            let t = -reach + 2.0 * reach * q as f64 / samples as f64;
            let d = dist(k, &x, &on(t));
            if d < best {
                (best_t, best) = (t, d);
            }
        }
        // golden-section polish inside the winning grid cell
        let h = 2.0 * reach / samples as f64;
        let (mut lo, mut hi) = (best_t - h, best_t + h);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let (m1, m2) = (hi - g * (hi - lo), lo + g * (hi - lo));
            if dist(k, &x, &on(m1)) < dist(k, &x, &on(m2)) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let sampled = best.min(dist(k, &x, &on(0.5 * (lo + hi))));
        off_plane = off_plane.max(minner(&w, &on(best_t)).abs() / wn);
        let denom = sampled.max(1e-12);
        worst_formula = worst_formula.max((formula - sampled).abs() / denom);
        worst_layer = worst_layer.max((layer - sampled).abs() / denom);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "hyperplane-distance",
        worst_formula < 1e-3 && worst_layer < 1e-3 && off_plane < 1e-9 && secs < 120.0,
        &format!(
            "100 cases in L^2: closed form rel err {worst_formula:.2e}, layer |logit|/||z|| rel err {worst_layer:.2e} \
             (<1e-3); sampled curve off-plane {off_plane:.1e}; {secs:.1}s"
        ),
    );
}

#[test]
fn mlr_sign_matches_hyperplane_side() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for i in 0..1000 {
        let k = KS[i % 4];
        let n = rng.random_range(1..=5);
        let z = normal(&mut rng, n, 1.0);
        let a = rng.random_range(-1.5..1.5);
        let x = lift(k, &normal(&mut rng, n, 1.5));
        let m = Lorentz::<f64>::with_k(k).unwrap();
        let tape = Tape::<f64>::inference();
        let logit = lorentz_mlr(
            &m,
            tape.constant(tensor(&[1, n + 1], &x)),
            tape.constant(tensor(&[1, n], &z)),
            tape.constant(tensor(&[1], &[a])),
        )
        .unwrap()
        .item();
        let side = minner(&normal_of(k, &z, a), &x);
        if logit.signum() != side.signum() || (logit == 0.0) != (side == 0.0) {
            mismatches += 1;
        }
    }
    verdict("mlr-sign", mismatches == 0, &format!("1000 cases, {mismatches} sign mismatches (exact)"));
}

fn conv_layer(spec: ConvSpec, m: Lorentz<f64>, rng: &mut ChaCha8Rng) -> (LorentzConv2d<f64>, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let conv = LorentzConv2d::new(&mut store, "c", spec, m, rng).unwrap();
    *store.value_mut(conv.fc.bias) = tensor(&[spec.out_channels], &normal(rng, spec.out_channels, 0.3));
    (conv, store)
}

fn run<L: Layer<f64>>(layer: &L, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::inference();
    let mut ctx = Ctx::new(&tape, store, false);
    layer.forward(&mut ctx, tape.constant(x.clone())).unwrap().value().as_ref().clone()
}

fn random_map(rng: &mut ChaCha8Rng, k: f64, shape: [usize; 3], c: usize) -> Tensor<f64> {
    let pts: Vec<f64> = (0..shape.iter().product::<usize>()).flat_map(|_| lift(k, &normal(rng, c, 1.0))).collect();
    tensor(&[shape[0], shape[1], shape[2], c + 1], &pts)
}

/// Direct evaluation: gather each receptive field with origin padding,
/// concatenate its points, apply the affine map and lift.
fn conv_by_loops(k: f64, spec: &ConvSpec, wt: &[f64], bias: &[f64], x: &Tensor<f64>) -> Vec<f64> {
    let [b, h, w, c1] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (kh, kw) = spec.kernel;
    let p = spec.padding as isize;
    let oh = (h + 2 * spec.padding - kh) / spec.stride + 1;
    let ow = (w + 2 * spec.padding - kw) / spec.stride + 1;
    let origin = lift(k, &vec![0.0; c1 - 1]);
    let mut out = Vec::new();
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut tsq = 0.0;
                let mut space = Vec::new();
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * spec.stride + ky) as isize - p;
                        let ix = (ox * spec.stride + kx) as isize - p;
                        let pt = if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            &origin[..]
                        } else {
                            let at = ((bi * h + iy as usize) * w + ix as usize) * c1;
                            &x.data()[at..at + c1]
                        };
                        tsq += pt[0] * pt[0];
                        space.extend_from_slice(&pt[1..]);
                    }
                }
                let cat: Vec<f64> = std::iter::once((tsq + (kh * kw - 1) as f64 / k).sqrt()).chain(space).collect();
                let y: Vec<f64> = bias
                    .iter()
                    .enumerate()
                    .map(|(o, bo)| bo + cat.iter().enumerate().map(|(i, v)| wt[o * cat.len() + i] * v).sum::<f64>())
                    .collect();
                out.extend(lift(k, &y));
            }
        }
    }
    out
}

/// Spreads a map apart by `stride`, filling the gaps with the origin.
fn interleave(m: &Lorentz<f64>, x: &Tensor<f64>, stride: usize) -> Tensor<f64> {
    let [b, h, w, c1] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (vh, vw) = ((h - 1) * stride + 1, (w - 1) * stride + 1);
    let origin = m.origin_tensor(c1 - 1).into_data();
    let mut out = Vec::with_capacity(b * vh * vw * c1);
    for bi in 0..b {
        for y in 0..vh {
            for xx in 0..vw {
                if y % stride == 0 && xx % stride == 0 {
                    let at = ((bi * h + y / stride) * w + xx / stride) * c1;
                    out.extend_from_slice(&x.data()[at..at + c1]);
                } else {
                    out.extend_from_slice(&origin);
                }
            }
        }
    }
    tensor(&[b, vh, vw, c1], &out)
}

#[test]
fn conv_equivalences() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut loop_err = 0.0f64;
    let (mut tconv_exact, mut pointwise_exact) = (true, true);
    let mut cases = 0;
    for k in KS {
        let m = Lorentz::<f64>::with_k(k).unwrap();
        for (h, w, cin, cout, kernel, stride, pad) in
            [(5, 5, 2, 3, 3, 1, 1), (7, 6, 1, 4, 3, 2, 0), (6, 6, 3, 2, 5, 1, 2), (5, 7, 2, 2, 2, 2, 1), (4, 4, 2, 3, 1, 1, 0)]
        {
            let spec = ConvSpec::new(cin, cout, kernel, stride, pad);
            let (conv, store) = conv_layer(spec, m, &mut rng);
            let x = random_map(&mut rng, k, [2, h, w], cin);
            let y = run(&conv, &store, &x);
            let want = conv_by_loops(k, &spec, store.value(conv.fc.weight).data(), store.value(conv.fc.bias).data(), &x);
            assert_eq!(y.numel(), want.len());
            for (a, b) in y.data().iter().zip(&want) {
                loop_err = loop_err.max((a - b).abs() / b.abs().max(1.0));
            }
            cases += 1;
        }
        for (kernel, stride, pad, hw) in [(3, 2, 1, 3), (4, 2, 1, 4), (3, 3, 0, 2), (2, 2, 0, 3), (3, 1, 1, 4)] {
            let spec = ConvSpec::new(2, 3, kernel, stride, pad).transposed();
            let (tconv, store) = conv_layer(spec, m, &mut rng);
            let x = random_map(&mut rng, k, [2, hw, hw], 2);
            let y = run(&tconv, &store, &x);
            let mut plain = tconv.clone();
            plain.spec = ConvSpec::new(2, 3, kernel, 1, kernel - 1 - pad);
            tconv_exact &= y == run(&plain, &store, &interleave(&m, &x, stride));
        }
        let spec = ConvSpec::new(3, 4, 1, 1, 0);
        let (conv, store) = conv_layer(spec, m, &mut rng);
        let x = random_map(&mut rng, k, [2, 4, 5], 3);
        let y = run(&conv, &store, &x);
        let rows = run(&conv.fc, &store, &x.reshape(&[40, 4]).unwrap());
        pointwise_exact &= y.reshape(&[40, 5]).unwrap() == rows;
    }
    verdict(
        "conv-equivalences",
        loop_err <= 1e-12 && tconv_exact && pointwise_exact,
        &format!(
            "patch path vs nested loops over {cases} configs: {loop_err:.2e} (<=1e-12); transposed = interleave+conv: \
             {tconv_exact}; 1x1 stride-1 = per-position fc: {pointwise_exact}"
        ),
    );
}

fn bn_forward<T: Real>(bn: &LorentzBatchNorm<T>, store: &ParamStore<T>, x: &Tensor<T>) -> (Tensor<T>, Vec<(hcnn::layers::ParamId, Tensor<T>)>) {
    let tape = Tape::inference();
    let mut ctx = Ctx::new(&tape, store, true);
    let y = bn.forward(&mut ctx, tape.constant(x.clone())).unwrap().value().as_ref().clone();
    (y, ctx.take_updates())
}

/// Batch centroid and variance as the layer computes them.
fn stats(bn: &LorentzBatchNorm<f64>, x: &Tensor<f64>) -> (Vec<f64>, f64) {
    let n1 = bn.dim + 1;
    let b = x.shape()[0];
    let tape = Tape::inference();
    let pts = tape.constant(x.reshape(&[b, x.numel() / (b * n1), n1]).unwrap());
    let (mu, var) = bn.batch_stats(pts).unwrap();
    (mu.value().data().to_vec(), var.item())
}

#[test]
fn batch_norm_contracts() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut ident, mut ident_literal, mut var_err) = (0.0f64, 0.0f64, 0.0f64);
    for k in KS {
        let m = Lorentz::<f64>::with_k(k).unwrap();
        for shape in [vec![16usize], vec![4, 3, 3]] {
            let n = 3;
            let count: usize = shape.iter().product();
            let pts: Vec<f64> = (0..count).flat_map(|_| lift(k, &normal(&mut rng, n, 1.0))).collect();
            let mut full = shape.clone();
            full.push(n + 1);
            let x = tensor::<f64>(&full, &pts);

            let mut store = ParamStore::new();
            let bn = LorentzBatchNorm::new(&mut store, "bn", n, m).unwrap();
            let (mu, var) = stats(&bn, &x);
            *store.value_mut(bn.beta) = tensor(&[n], &mu[1..]);
            // the normalizer is sqrt(var + eps), so unit scaling is gamma^2 = var + eps
            *store.value_mut(bn.gamma) = tensor(&[1], &[softplus_inverse((var + bn.eps).sqrt())]);
            let (y, _) = bn_forward(&bn, &store, &x);
            ident = ident.max(y.max_abs_diff(&x));
            *store.value_mut(bn.gamma) = tensor(&[1], &[softplus_inverse(var.sqrt())]);
            ident_literal = ident_literal.max(bn_forward(&bn, &store, &x).0.max_abs_diff(&x));

            // output spread about beta is gamma^2
            let gamma: f64 = rng.random_range(0.5..2.0);
            let beta = lift(k, &normal(&mut rng, n, 1.0));
            *store.value_mut(bn.beta) = tensor(&[n], &beta[1..]);
            *store.value_mut(bn.gamma) = tensor(&[1], &[softplus_inverse(gamma)]);
            let (y, _) = bn_forward(&bn, &store, &x);
            let d2: Vec<f64> = y.data().chunks(n + 1).map(|r| dist(k, r, &beta).powi(2)).collect();
            let frechet = d2.iter().sum::<f64>() / d2.len() as f64;
            var_err = var_err.max((frechet - gamma * gamma).abs() / (gamma * gamma));
        }
    }

    // running mean over 1000 updates at both precisions
    fn drift<T: Real>(k: f64, rng: &mut ChaCha8Rng) -> f64 {
        let m = Lorentz::<T>::with_k(T::lit(k)).unwrap();
        let n = 4;
        let mut store = ParamStore::new();
        let bn = LorentzBatchNorm::new(&mut store, "bn", n, m).unwrap();
        let mut worst = 0.0f64;
        for step in 0..1000 {
            let shift: Vec<f64> = normal(rng, n, 1.0).iter().map(|v| v + (step as f64 / 200.0).sin()).collect();
            let pts: Vec<f64> = (0..8)
                .flat_map(|_| {
                    let s: Vec<f64> = normal(rng, n, 0.5).iter().zip(&shift).map(|(a, b)| a + b).collect();
                    lift(k, &s)
                })
                .collect();
            let (_, updates) = bn_forward(&bn, &store, &tensor::<T>(&[8, n + 1], &pts));
            store.apply_updates(updates);
            let rm = store.value(bn.running_mean).to_f64_vec();
            let r = if rm[0] > 0.0 { max_residual(k, &rm, n + 1) } else { f64::INFINITY };
            worst = worst.max(r);
        }
        worst
    }
    let (mut run64, mut run32) = (0.0f64, 0.0f64);
    for k in KS {
        run64 = run64.max(drift::<f64>(k, &mut rng));
        run32 = run32.max(drift::<f32>(k, &mut rng));
    }
    verdict(
        "batch-norm",
        ident <= 1e-5 && var_err < 1e-4 && run64 <= 1e-10 && run32 <= 1e-5,
        &format!(
            "identity max |y-x| {ident:.2e} (<=1e-5; with gamma^2 = var, eps left in the normalizer: {ident_literal:.2e}); \
             output variance rel err {var_err:.2e} (<1e-4); running mean residual over 1000 updates 64-bit {run64:.1e}, \
             32-bit {run32:.1e}"
        ),
    );
}

/// Covers what the presets do not: exp lift, transposed convolution,
/// residual blocks in a small map, and an activated fully connected layer.
fn coverage_model(euclidean: bool) -> ModelConfig {
    let conv = |i, o, s, transposed| LayerSpec::LorentzConv {
        in_channels: i,
        out_channels: o,
        kernel: 3,
        stride: s,
        padding: 1,
        transposed,
    };
    let cfg = ModelConfig {
        architecture: "coverage".into(),
        input: vec![6, 6, 2],
        classes: 3,
        curvature: Curvature::new(-0.7).unwrap(),
        projection: Projection::ExpLift,
        clip_radius: Some(2.0),
        seed: 3,
        layers: vec![
            LayerSpec::InputProjection { mode: None },
            conv(2, 4, 2, false),
            LayerSpec::LorentzBn { dim: 4 },
            LayerSpec::LorentzRelu,
            conv(4, 3, 2, true),
            LayerSpec::Residual {
                branch: vec![conv(3, 3, 1, false), LayerSpec::LorentzBn { dim: 3 }],
            },
            LayerSpec::Flatten,
            LayerSpec::LorentzFc {
                in_dim: 75,
                out_dim: 8,
                activation: Activation::Relu,
            },
            LayerSpec::LorentzFc {
                in_dim: 8,
                out_dim: 6,
                activation: Activation::Identity,
            },
            LayerSpec::LorentzMlr { dim: 6, classes: 3 },
        ],
    };
    if euclidean {
        euclidean_twin(&cfg)
    } else {
        cfg
    }
}

#[test]
fn gradcheck_every_layer_and_composite() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // a 1e-5 step keeps difference roundoff on the summed layer outputs
    // well below the tolerance
    let opts = GradcheckOptions {
        eps: 1e-5,
        max_coords: Some(48),
        ..Default::default()
    };
    let mut configs = Vec::new();
    for name in ["lenet-hcnn", "resnet-mini", "hybrid"] {
        configs.push(preset(name, &[28, 28, 1], 10, false).unwrap());
        configs.push(preset(name, &[28, 28, 1], 10, true).unwrap());
    }
    configs.push(preset("mlr-only", &[3], 4, false).unwrap());
    configs.push(coverage_model(false));
    configs.push(coverage_model(true));

    let mut kinds = std::collections::BTreeSet::new();
    let (mut worst, mut failures, mut checks) = (0.0f64, Vec::new(), 0);
    for cfg in &configs {
        let model = Model::<f64>::build(cfg).unwrap();
        let mut shape = vec![3];
        shape.extend(&cfg.input);
        let x = Tensor::from_fn(&shape, |_| rng.random_range(0.0..1.0));
        for train in [true, false] {
            for c in model.layer_gradchecks(&x, train, &opts).unwrap() {
                worst = worst.max(c.report.max_rel_err);
                kinds.insert(c.kind.clone());
                checks += 1;
                if !c.report.passed() {
                    failures.push(format!("{}/{} ({})", cfg.architecture, c.layer, c.kind));
                }
            }
        }
    }
    // the whole lenet-hcnn, loss included
    let lenet = Model::<f64>::build(&preset("lenet-hcnn", &[28, 28, 1], 10, false).unwrap()).unwrap();
    let x = Tensor::from_fn(&[3, 28, 28, 1], |_| rng.random_range(0.0..1.0));
    let composite = GradcheckOptions {
        max_coords: Some(96),
        ..Default::default()
    };
    let mut composite_err = 0.0f64;
    for train in [true, false] {
        let r = lenet.gradcheck(&x, &[1, 7, 3], train, &composite).unwrap();
        composite_err = composite_err.max(r.max_rel_err);
        if !r.passed() {
            failures.push(format!("lenet-hcnn composite (train={train})"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "gradcheck",
        failures.is_empty() && worst < 1e-4 && composite_err < 1e-4 && secs < 300.0,
        &format!(
            "{checks} layer checks over kinds [{}]: max rel err {worst:.2e}; lenet-hcnn composite {composite_err:.2e} (<1e-4); \
             failures {failures:?}; {secs:.1}s (<300s)",
            kinds.into_iter().collect::<Vec<_>>().join(", ")
        ),
    );
}

struct Trained {
    record: RunRecord,
    initial_test_loss: f64,
    test_acc: f64,
    test_loss: f64,
}

fn mixture_run() -> &'static Trained {
    static RUN: OnceLock<Trained> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut cfg = ExperimentConfig::preset("mlr-only", false).unwrap();
        cfg.train.detect_anomaly = true;
        let (train_set, test_set) = load_data::<f32>(&cfg.data, None).unwrap();
        fit(&cfg.model, &train_set, &test_set, &cfg.train)
    })
}

fn fit(cfg: &ModelConfig, train_set: &Dataset<f32>, test_set: &Dataset<f32>, tc: &TrainConfig) -> Trained {
    let mut model = Model::<f32>::build(cfg).unwrap();
    let (initial_test_loss, _) = evaluate(&model, test_set, 256).unwrap();
    let record = train(&mut model, train_set, Some(test_set), tc, |_| {}).unwrap();
    let (test_loss, test_acc) = evaluate(&model, test_set, 256).unwrap();
    Trained {
        record,
        initial_test_loss,
        test_acc,
        test_loss,
    }
}

#[test]
fn mlr_only_learns_the_mixture() {
    let _g = serial();
    let r = mixture_run();
    let first = r
        .record
        .metrics
        .iter()
        .find(|m| m.split == Split::Train && m.accuracy >= 0.99)
        .map(|m| m.epoch);
    let last = r.record.last(Split::Train).unwrap();
    let secs = r.record.wall_seconds;
    verdict(
        "mlr-only-mixture",
        first.is_some_and(|e| e <= 200) && secs < 60.0,
        &format!(
            "separation 4, spread 0.1, 32-bit: train acc >= 99% first at epoch {first:?}, final {:.4}; test {:.4}; {secs:.1}s (<60s)",
            last.accuracy, r.test_acc
        ),
    );
}

fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

const MNIST_KS: [f64; 3] = [-0.5, -1.0, -2.0];

/// lenet-hcnn at each curvature plus the Euclidean twin, same budget.
fn mnist_runs() -> &'static (Vec<(f64, Trained)>, Trained) {
    static RUNS: OnceLock<(Vec<(f64, Trained)>, Trained)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let train_set = load_mnist::<f32>(&mnist_dir(), MnistSplit::Train).unwrap();
        let test_set = load_mnist::<f32>(&mnist_dir(), MnistSplit::Test).unwrap();
        let mut tc = TrainConfig::new(10, 64, OptimizerConfig::adam(1e-3));
        tc.detect_anomaly = true;
        tc.eval_train = false;
        let base = preset("lenet-hcnn", &[28, 28, 1], 10, false).unwrap();
        let twin = fit(&euclidean_twin(&base), &train_set, &test_set, &tc);
        let hyper = MNIST_KS
            .iter()
            .map(|&k| {
                let mut cfg = base.clone();
                cfg.curvature = Curvature::new(k).unwrap();
                (k, fit(&cfg, &train_set, &test_set, &tc))
            })
            .collect();
        (hyper, twin)
    })
}

#[test]
fn mnist_matches_euclidean_twin() {
    let _g = serial();
    let (hyper, twin) = mnist_runs();
    let (_, h) = hyper.iter().find(|(k, _)| *k == -1.0).unwrap();
    let gap = (h.test_acc - twin.test_acc) * 100.0;
    let secs = h.record.wall_seconds;
    verdict(
        "mnist-twin",
        gap.abs() <= 3.0 && h.test_acc >= 0.90 && secs < 3600.0,
        &format!(
            "8k train / 2k test, 10 epochs adam 1e-3, 32-bit: lenet-hcnn {:.4} vs twin {:.4} (gap {gap:+.2} points, <=3; >=0.90); \
             {secs:.0}s vs {:.0}s",
            h.test_acc, twin.test_acc, twin.record.wall_seconds
        ),
    );
}

#[test]
fn curvature_sweep_converges() {
    let _g = serial();
    let (hyper, _) = mnist_runs();
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, r) in hyper {
        let losses: Vec<f64> = r.record.metrics.iter().map(|m| m.loss).collect();
        let ok = losses.iter().all(|l| l.is_finite()) && r.test_loss < r.initial_test_loss && r.test_acc >= 0.85;
        pass &= ok;
        parts.push(format!(
            "K={k}: test {:.4}, loss {:.3} -> {:.3}",
            r.test_acc, r.initial_test_loss, r.test_loss
        ));
    }
    verdict("curvature-sweep", pass, &format!("{} (>=0.85, finite and decreasing)", parts.join("; ")));
}

#[test]
fn stability_at_32_bit() {
    let _g = serial();
    let mut events = Vec::new();
    let (hyper, twin) = mnist_runs();
    for (k, r) in hyper {
        events.push((format!("mnist K={k}"), r.record.nan_events));
    }
    events.push(("mnist twin".into(), twin.record.nan_events));
    events.push(("mixture".into(), mixture_run().record.nan_events));

    // forward and backward through every preset and the coverage model
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cfgs: Vec<ModelConfig> = ["lenet-hcnn", "resnet-mini", "hybrid"]
        .iter()
        .map(|n| preset(n, &[28, 28, 1], 10, false).unwrap())
        .collect();
    cfgs.push(coverage_model(false));
    for cfg in &cfgs {
        let model = Model::<f32>::build(cfg).unwrap();
        let mut shape = vec![8];
        shape.extend(&cfg.input);
        let x = Tensor::<f32>::from_fn(&shape, |_| rng.random_range(0.0..1.0));
        let labels: Vec<usize> = (0..8).map(|i| i % cfg.classes).collect();
        let tape = Tape::new();
        tape.set_detect_anomaly(true);
        let mut ctx = Ctx::new(&tape, model.store(), true);
        for (id, p) in model.store().iter() {
            if p.trainable {
                let v = tape.leaf(p.value.clone());
                ctx.bind(id, v);
            }
        }
        let loss = model.forward(&mut ctx, tape.constant(x)).unwrap().cross_entropy(&labels).unwrap();
        tape.backward(loss).unwrap();
        events.push((format!("{} fwd+bwd", cfg.architecture), tape.anomalies().len()));
    }
    let total: usize = events.iter().map(|(_, n)| n).sum();
    let listing: Vec<String> = events.iter().map(|(w, n)| format!("{w}: {n}")).collect();
    verdict(
        "stability-32bit",
        total == 0,
        &format!("non-finite events with the detector on: {} (the geometry check counts its own)", listing.join(", ")),
    );
}
