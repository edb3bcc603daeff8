//! Invariant suites run by `hcnn selftest`.
//!
//! Every case draws its data from its own seed, so a failure can be
//! replayed by running that single case.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autograd::Tape;
use crate::layers::{
    hyperplane_normal, lorentz_mlr, softplus_inverse, ConvSpec, Ctx, Layer, LorentzBatchNorm, LorentzConv2d,
    ParamStore,
};
use crate::manifold::Lorentz;
use crate::tensor::Tensor;

const KS: [f64; 4] = [-0.2, -0.5, -1.0, -2.0];

/// A Lorentzian inner product on flat coordinate slices.
pub type InnerFn = fn(&[f64], &[f64]) -> f64;

/// The library's inner product, evaluated through the tensor ops.
pub fn library_inner(x: &[f64], y: &[f64]) -> f64 {
    let m = Lorentz::with_k(-1.0).expect("valid curvature");
    let tape = Tape::inference();
    let v = |s: &[f64]| tape.constant(Tensor::from_f64(&[s.len()], s).expect("vector"));
    m.inner(v(x), v(y)).expect("matching lengths").item()
}

#[derive(Debug, Clone)]
pub struct SelftestOptions {
    /// Inner product under test in the `minkowski-inner` suite.
    pub inner: InnerFn,
    /// Scales the number of cases in every suite.
    pub scale: f64,
    pub seed: u64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            inner: library_inner,
            scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub invariant: &'static str,
    pub cases: usize,
    pub failed: usize,
    pub first: Option<Failure>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failed == 0
    }
}

type Case = fn(&mut ChaCha8Rng, f64, &SelftestOptions) -> Result<(), String>;

struct Suite {
    name: &'static str,
    invariant: &'static str,
    cases: usize,
    run: Case,
}

const SUITES: &[Suite] = &[
    Suite {
        name: "minkowski-inner",
        invariant: "<x,x>_L = 1/K on the hyperboloid, symmetric, and K<x,y>_L >= 1",
        cases: 1000,
        run: inner_case,
    },
    Suite {
        name: "exp-log",
        invariant: "log_x(exp_x(v)) = v and exp lands on the hyperboloid",
        cases: 1000,
        run: exp_log_case,
    },
    Suite {
        name: "transport",
        invariant: "parallel transport preserves Lorentz norms and tangency",
        cases: 1000,
        run: transport_case,
    },
    Suite {
        name: "centroid",
        invariant: "closed-form centroid minimizes the squared Lorentzian distance objective",
        cases: 50,
        run: centroid_case,
    },
    Suite {
        name: "hyperplane",
        invariant: "MLR logit / ||z|| equals the geodesic distance to the class hyperplane",
        cases: 100,
        run: hyperplane_case,
    },
    Suite {
        name: "mlr-sign",
        invariant: "sign(logit) = sign(<w, x>_L) for the explicit hyperplane normal",
        cases: 1000,
        run: mlr_sign_case,
    },
    Suite {
        name: "conv-oracle",
        invariant: "patch-matrix convolution equals a nested-loop evaluation",
        cases: 40,
        run: conv_case,
    },
    Suite {
        name: "batch-norm",
        invariant: "output Frechet variance about beta is gamma^2 and the identity setting reproduces inputs",
        cases: 40,
        run: bn_case,
    },
];

/// Names of all suites, in run order.
pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|s| s.name).collect()
}

/// Runs every suite.
pub fn run_all(opts: &SelftestOptions) -> Vec<SuiteReport> {
    SUITES.iter().map(|s| run_suite(s, opts)).collect()
}

fn run_suite(suite: &Suite, opts: &SelftestOptions) -> SuiteReport {
    let cases = ((suite.cases as f64 * opts.scale).ceil() as usize).max(KS.len());
    let mut failed = 0;
    let mut first = None;
    for i in 0..cases {
        let seed = opts.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = KS[i % KS.len()];
        if let Err(message) = (suite.run)(&mut rng, k, opts) {
            failed += 1;
            first.get_or_insert(Failure {
                seed,
                message: format!("K={k}: {message}"),
            });
        }
    }
    SuiteReport {
        name: suite.name,
        invariant: suite.invariant,
        cases,
        failed,
        first,
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn lift(k: f64, space: &[f64]) -> Vec<f64> {
    let t = (space.iter().map(|v| v * v).sum::<f64>() - 1.0 / k).sqrt();
    std::iter::once(t).chain(space.iter().copied()).collect()
}

fn loop_inner(x: &[f64], y: &[f64]) -> f64 {
    -x[0] * y[0] + x[1..].iter().zip(&y[1..]).map(|(a, b)| a * b).sum::<f64>()
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn vec_t(v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(&[1, v.len()], v).expect("row")
}

fn inner_case(rng: &mut ChaCha8Rng, k: f64, opts: &SelftestOptions) -> Result<(), String> {
    let inner = opts.inner;
    let n = rng.random_range(1..6);
    let x = lift(k, &randn(rng, n, 1.5));
    let y = lift(k, &randn(rng, n, 1.5));
    let mut o = vec![0.0; n + 1];
    o[0] = (-1.0 / k).sqrt();
    let (xx, oo, xy, yx) = (inner(&x, &x), inner(&o, &o), inner(&x, &y), inner(&y, &x));
    let tol = 1e-10 * x[0] * x[0];
    check((xx - 1.0 / k).abs() <= tol.max(1e-12), || format!("<x,x> = {xx}, expected {}", 1.0 / k))?;
    check((oo - 1.0 / k).abs() <= 1e-12, || format!("<o,o> = {oo}, expected {}", 1.0 / k))?;
    check(xy == yx, || format!("asymmetric: {xy} vs {yx}"))?;
    check(k * xy >= 1.0 - 1e-10, || format!("K<x,y> = {} < 1", k * xy))?;
    let m = Lorentz::with_k(k).map_err(|e| e.to_string())?;
    let tape = Tape::inference();
    let d = m.distance(tape.constant(vec_t(&x)), tape.constant(vec_t(&y))).map_err(|e| e.to_string())?.item();
    let expect = (k * xy).max(1.0).acosh() / (-k).sqrt();
    check((d - expect).abs() <= 1e-9 * expect.max(1.0), || format!("distance {d} vs {expect} from <x,y>"))
}

fn tangent_at(m: &Lorentz<f64>, x: &[f64], rng: &mut ChaCha8Rng, scale: f64) -> Result<Vec<f64>, String> {
    let n = x.len() - 1;
    let mut v0 = vec![0.0];
    v0.extend(randn(rng, n, scale));
    let tape = Tape::inference();
    let v = m
        .transport_from_origin(tape.constant(vec_t(x)), tape.constant(vec_t(&v0)))
        .map_err(|e| e.to_string())?;
    Ok(v.value().data().to_vec())
}

fn exp_log_case(rng: &mut ChaCha8Rng, k: f64, _: &SelftestOptions) -> Result<(), String> {
    let m = Lorentz::with_k(k).map_err(|e| e.to_string())?;
    let n = rng.random_range(1..6);
    let x = lift(k, &randn(rng, n, 1.0));
    let v = tangent_at(&m, &x, rng, 0.8)?;
    let tape = Tape::inference();
    let (xv, vv) = (tape.constant(vec_t(&x)), tape.constant(vec_t(&v)));
    let y = m.exp(xv, vv).map_err(|e| e.to_string())?;
    let res = m.manifold_residual(&y.value());
    check(res <= 1e-10, || format!("exp residual {res:e}"))?;
    let back = m.log(xv, y).map_err(|e| e.to_string())?.value();
    let err = back.data().iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let norm = v.iter().map(|a| a.abs()).fold(0.0, f64::max);
    check(err <= 1e-5 * norm.max(1e-3), || format!("log(exp(v)) differs by {err:e} (|v| {norm:e})"))
}

fn transport_case(rng: &mut ChaCha8Rng, k: f64, _: &SelftestOptions) -> Result<(), String> {
    let m = Lorentz::with_k(k).map_err(|e| e.to_string())?;
    let n = rng.random_range(1..6);
    let x = lift(k, &randn(rng, n, 1.0));
    let y = lift(k, &randn(rng, n, 1.0));
    let v = tangent_at(&m, &x, rng, 1.0)?;
    let tape = Tape::inference();
    let w = m
        .transport(tape.constant(vec_t(&x)), tape.constant(vec_t(&y)), tape.constant(vec_t(&v)))
        .map_err(|e| e.to_string())?
        .value();
    let (nv, nw) = (loop_inner(&v, &v), loop_inner(w.data(), w.data()));
    check((nv - nw).abs() <= 1e-5 * nv.abs().max(1e-6), || format!("norm {nv} became {nw}"))?;
    let tang = loop_inner(w.data(), &y);
    check(tang.abs() <= 1e-8 * y[0] * w.data()[0].abs().max(1.0), || format!("<w, y>_L = {tang:e}"))
}

/// `sum_i w_i (2/K - 2 <x_i, mu>_L)` with `mu` lifted from its space part.
fn centroid_objective(k: f64, pts: &[Vec<f64>], w: &[f64], mu_s: &[f64]) -> f64 {
    let mu = lift(k, mu_s);
    pts.iter().zip(w).map(|(p, wi)| wi * (2.0 / k - 2.0 * loop_inner(p, &mu))).sum()
}

fn centroid_case(rng: &mut ChaCha8Rng, k: f64, _: &SelftestOptions) -> Result<(), String> {
    let m = Lorentz::with_k(k).map_err(|e| e.to_string())?;
    let count = rng.random_range(1..=5);
    let pts: Vec<Vec<f64>> = (0..count).map(|_| lift(k, &randn(rng, 2, 1.0))).collect();
    let w: Vec<f64> = (0..count).map(|_| rng.random_range(0.1..1.0)).collect();
    let tape = Tape::inference();
    let flat: Vec<f64> = pts.concat();
    let mu = m
        .centroid(
            tape.constant(Tensor::from_f64(&[count, 3], &flat).map_err(|e| e.to_string())?),
            0,
            Some(tape.constant(Tensor::from_f64(&[count, 1], &w).map_err(|e| e.to_string())?)),
        )
        .map_err(|e| e.to_string())?
        .value();
    let closed = centroid_objective(k, &pts, &w, &mu.data()[1..]);

    // gradient descent on the space part with backtracking
    let mut s = vec![0.0, 0.0];
    let mut f = centroid_objective(k, &pts, &w, &s);
    let mut step = 0.5;
    for _ in 0..5000 {
        let mu = lift(k, &s);
        let g: Vec<f64> = (0..2)
            .map(|j| {
                pts.iter()
                    .zip(&w)
                    .map(|(p, wi)| -2.0 * wi * (-p[0] * s[j] / mu[0] + p[j + 1]))
                    .sum()
            })
            .collect();
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < 1e-12 {
            break;
        }
        loop {
            let trial: Vec<f64> = s.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let ft = centroid_objective(k, &pts, &w, &trial);
            if ft <= f - 0.5 * step * gn * gn || step < 1e-14 {
                s = trial;
                f = ft;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
    }
    let gap = closed - f;
    check(gap < 1e-6, || format!("closed form {closed} exceeds descent optimum {f} by {gap:e}"))
}

/// Minimum geodesic distance from `x` to `{p : <w, p>_L = 0}` in L^2 by
/// sampling the hyperplane's geodesic densely, then refining.
fn dense_plane_distance(k: f64, w: &[f64], x: &[f64]) -> f64 {
    let ww = loop_inner(w, w);
    let u = [1.0, 0.0, 0.0];
    let c = loop_inner(&u, w) / ww;
    let mut e0: Vec<f64> = u.iter().zip(w).map(|(a, b)| a - c * b).collect();
    let n0 = (-loop_inner(&e0, &e0)).sqrt();
    let n0 = n0 * e0[0].signum();
    e0.iter_mut().for_each(|v| *v /= n0);
    let v = [0.0, -w[2], w[1]];
    let c = loop_inner(&v, &e0);
    let mut e1: Vec<f64> = v.iter().zip(&e0).map(|(a, b)| a + c * b).collect();
    let n1 = loop_inner(&e1, &e1).sqrt();
    e1.iter_mut().for_each(|v| *v /= n1);
    let r = (-1.0 / k).sqrt();
    let dist = |s: f64| {
        let p: Vec<f64> = e0.iter().zip(&e1).map(|(a, b)| r * (s.cosh() * a + s.sinh() * b)).collect();
        (k * loop_inner(&p, x)).max(1.0).acosh() / (-k).sqrt()
    };
    let (lo, hi, steps) = (-25.0, 25.0, 50_000);
    let h = (hi - lo) / steps as f64;
    let best = (0..=steps)
        .map(|i| lo + i as f64 * h)
        .min_by(|a, b| dist(*a).total_cmp(&dist(*b)))
        .unwrap_or(0.0);
    let (mut a, mut b) = (best - h, best + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if dist(c) < dist(d) {
            b = d;
        } else {
            a = c;
        }
    }
    dist(0.5 * (a + b))
}

/// Logit and explicit hyperplane normal for one random `(x, z, a)` in L^n.
fn mlr_instance(rng: &mut ChaCha8Rng, k: f64, n: usize) -> Result<(f64, f64, Vec<f64>, Vec<f64>), String> {
    let m = Lorentz::with_k(k).map_err(|e| e.to_string())?;
    let x = lift(k, &randn(rng, n, 1.0));
    let z = randn(rng, n, 1.0);
    let a = rng.random_range(-1.0..1.0);
    let tape = Tape::inference();
    let (zv, av) = (tape.constant(vec_t(&z)), tape.constant(vec_t(&[a]).reshape(&[1]).expect("scalar")));
    let logit = lorentz_mlr(&m, tape.constant(vec_t(&x)), zv, av).map_err(|e| e.to_string())?.item();
    let w = hyperplane_normal(&m, zv, av).map_err(|e| e.to_string())?.value().data().to_vec();
    let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((logit, zn, w, x))
}

fn hyperplane_case(rng: &mut ChaCha8Rng, k: f64, _: &SelftestOptions) -> Result<(), String> {
    let (logit, zn, w, x) = mlr_instance(rng, k, 2)?;
    let d = logit.abs() / zn;
    let oracle = dense_plane_distance(k, &w, &x);
    check((d - oracle).abs() <= 1e-3 * oracle.max(1e-3), || format!("formula {d} vs sampled {oracle}"))
}

fn mlr_sign_case(rng: &mut ChaCha8Rng, k: f64, _: &SelftestOptions) -> Result<(), String> {
    let n = rng.random_range(1..6);
    let (logit, _, w, x) = mlr_instance(rng, k, n)?;
    let side = loop_inner(&w, &x);
    check(logit.signum() == side.signum() || (logit == 0.0 && side.abs() < 1e-12), || {
        format!("logit {logit} on the other side of <w,x>_L = {side}")
    })
}

fn conv_case(rng: &mut ChaCha8Rng, k: f64, _: &SelftestOptions) -> Result<(), String> {
    let err = |e: crate::Error| e.to_string();
    let m = Lorentz::with_k(k).map_err(err)?;
    let (b, h, wd) = (2, rng.random_range(3..7), rng.random_range(3..7));
    let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..4));
    let kernel = rng.random_range(1..=3.min(h).min(wd));
    let spec = ConvSpec::new(cin, cout, kernel, rng.random_range(1..3), rng.random_range(0..kernel));
    let mut store = ParamStore::new();
    let conv = LorentzConv2d::new(&mut store, "conv", spec, m, rng).map_err(err)?;
    *store.value_mut(conv.fc.bias) = Tensor::from_f64(&[cout], &randn(rng, cout, 0.5)).map_err(err)?;
    let pts: Vec<f64> = (0..b * h * wd).flat_map(|_| lift(k, &randn(rng, cin, 1.0))).collect();
    let x = Tensor::from_f64(&[b, h, wd, cin + 1], &pts).map_err(err)?;
    let tape = Tape::inference();
    let mut ctx = Ctx::new(&tape, &store, false);
    let y = conv.forward(&mut ctx, tape.constant(x.clone())).map_err(err)?.value();

    let (oh, ow) = spec.output_hw(h, wd).map_err(err)?;
    let wt = store.value(conv.fc.weight).data();
    let bias = store.value(conv.fc.bias).data();
    let origin = lift(k, &vec![0.0; cin]);
    let p = spec.padding as isize;
    let mut expect = Vec::with_capacity(y.numel());
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut tsq = 0.0;
                let mut space = Vec::new();
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let iy = (oy * spec.stride + ky) as isize - p;
                        let ix = (ox * spec.stride + kx) as isize - p;
                        let pt = if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                            &origin[..]
                        } else {
                            let base = ((bi * h + iy as usize) * wd + ix as usize) * (cin + 1);
                            &x.data()[base..base + cin + 1]
                        };
                        tsq += pt[0] * pt[0];
                        space.extend_from_slice(&pt[1..]);
                    }
                }
                let taps = (kernel * kernel) as f64;
                let cat: Vec<f64> = std::iter::once((tsq + (taps - 1.0) / k).sqrt()).chain(space).collect();
                let ys: Vec<f64> = (0..cout)
                    .map(|o| bias[o] + cat.iter().enumerate().map(|(i, v)| wt[o * cat.len() + i] * v).sum::<f64>())
                    .collect();
                expect.extend(lift(k, &ys));
            }
        }
    }
    let diff = y.data().iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(y.numel() == expect.len() && diff <= 1e-12 * expect.iter().fold(1.0, |a: f64, b| a.max(b.abs())), || {
        format!("{spec:?} on {h}x{wd}: max difference {diff:e}")
    })
}

fn bn_case(rng: &mut ChaCha8Rng, k: f64, _: &SelftestOptions) -> Result<(), String> {
    let err = |e: crate::Error| e.to_string();
    let m = Lorentz::with_k(k).map_err(err)?;
    let n = rng.random_range(2..5);
    let rows = 48;
    let center = randn(rng, n, 0.7);
    let tape = Tape::inference();
    let mu = m.project(tape.constant(vec_t(&center))).map_err(err)?;
    let noise: Vec<f64> = (0..rows).flat_map(|_| std::iter::once(0.0).chain(randn(rng, n, 0.8))).collect();
    let v = m
        .transport_from_origin(mu, tape.constant(Tensor::from_f64(&[rows, n + 1], &noise).map_err(err)?))
        .map_err(err)?;
    let x = m.exp(mu, v).map_err(err)?.value();

    let mut store = ParamStore::new();
    let bn = LorentzBatchNorm::new(&mut store, "bn", n, m).map_err(err)?;
    let gamma = rng.random_range(0.3..2.0);
    *store.value_mut(bn.gamma) = Tensor::from_f64(&[1], &[softplus_inverse(gamma)]).map_err(err)?;
    let beta_s = randn(rng, n, 0.5);
    *store.value_mut(bn.beta) = Tensor::from_f64(&[n], &beta_s).map_err(err)?;
    let run = |store: &ParamStore<f64>| -> Result<Tensor<f64>, String> {
        let tape = Tape::inference();
        let mut ctx = Ctx::new(&tape, store, true);
        Ok(bn.forward(&mut ctx, tape.constant((*x).clone())).map_err(err)?.value().as_ref().clone())
    };
    let y = run(&store)?;
    let beta = lift(k, &beta_s);
    let var: f64 = y
        .data()
        .chunks(n + 1)
        .map(|r| ((k * loop_inner(r, &beta)).max(1.0).acosh() / (-k).sqrt()).powi(2))
        .sum::<f64>()
        / rows as f64;
    check((var - gamma * gamma).abs() <= 1e-4 * gamma * gamma, || format!("output variance {var} vs gamma^2 {}", gamma * gamma))?;

    // identity: beta = batch mean, gamma^2 = batch variance + eps
    let tape = Tape::inference();
    let (bm, bv) = bn
        .batch_stats(tape.constant(x.reshape(&[rows, 1, n + 1]).map_err(err)?))
        .map_err(err)?;
    *store.value_mut(bn.beta) = bm.value().narrow(0, 1, n).map_err(err)?;
    *store.value_mut(bn.gamma) = Tensor::from_f64(&[1], &[softplus_inverse((bv.item() + bn.eps).sqrt())]).map_err(err)?;
    let y = run(&store)?;
    let diff = y.max_abs_diff(&x);
    check(diff < 1e-5, || format!("identity setting moved inputs by {diff:e}"))
}
