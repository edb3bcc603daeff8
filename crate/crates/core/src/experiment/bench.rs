//! Forward+backward timing of each layer kind against its Euclidean twin.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::layers::{
    Activation, BatchNorm, Conv2d, ConvSpec, Ctx, Layer, Linear, LorentzBatchNorm, LorentzConv2d, LorentzFc,
    LorentzMlr, LorentzRelu, ParamStore, Relu,
};
use crate::manifold::Lorentz;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Hyperbolic,
    Euclidean,
}

/// One line of the benchmark CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub layer: String,
    pub variant: Variant,
    /// Input shape, `x`-separated.
    pub shape: String,
    pub repeats: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// This row's median over the Euclidean median for the same layer.
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub repeats: usize,
    pub warmup: usize,
    pub batch: usize,
    pub seed: u64,
    /// Each timed sample loops the layer until it lasts at least this long.
    pub min_sample_ms: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repeats: 20,
            warmup: 2,
            batch: 8,
            seed: 0,
            min_sample_ms: 10.0,
        }
    }
}

/// Layer kinds covered, in report order.
pub const LAYER_KINDS: &[&str] = &["conv", "batch_norm", "relu", "fc", "head"];

fn step<T: Real, L: Layer<T>>(layer: &L, store: &ParamStore<T>, x: &Tensor<T>) -> Result<()> {
    let tape = Tape::new();
    let mut ctx = Ctx::new(&tape, store, true);
    let y = layer.forward(&mut ctx, tape.leaf(x.clone()))?;
    tape.backward(y.sum_all())
}

type Job<'a> = Box<dyn Fn() -> Result<()> + 'a>;

fn job<'a, T: Real, L: Layer<T>>(layer: &'a L, store: &'a ParamStore<T>, x: &'a Tensor<T>) -> Job<'a> {
    Box::new(move || step(layer, store, x))
}

/// Per-iteration milliseconds of `repeats` samples for every job.
///
/// Samples are taken round-robin, one per job per repeat, so a slow stretch
/// of the host lands on all rows alike instead of on whichever layer happened
/// to be running.
fn time_jobs(jobs: &[Job<'_>], opts: &BenchOptions) -> Result<Vec<Vec<f64>>> {
    let mut iters = Vec::with_capacity(jobs.len());
    for f in jobs {
        let start = Instant::now();
        for _ in 0..opts.warmup.max(1) {
            f()?;
        }
        let once = start.elapsed().as_secs_f64() * 1e3 / opts.warmup.max(1) as f64;
        iters.push((opts.min_sample_ms / once.max(1e-6)).ceil().max(1.0) as usize);
    }
    let mut times = vec![Vec::with_capacity(opts.repeats); jobs.len()];
    for _ in 0..opts.repeats {
        for ((f, &n), t) in jobs.iter().zip(&iters).zip(&mut times) {
            let start = Instant::now();
            for _ in 0..n {
                f()?;
            }
            t.push(start.elapsed().as_secs_f64() * 1e3 / n as f64);
        }
    }
    Ok(times)
}

fn row(layer: &str, variant: Variant, x_shape: &[usize], mut times: Vec<f64>) -> BenchRow {
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    BenchRow {
        layer: layer.to_string(),
        variant,
        shape: x_shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x"),
        repeats: times.len(),
        median_ms: median,
        min_ms: times[0],
        max_ms: times[times.len() - 1],
        ratio: 1.0,
    }
}

fn on_manifold<T: Real>(m: &Lorentz<T>, rng: &mut ChaCha8Rng, rows: &[usize], n: usize) -> Result<Tensor<T>> {
    let count: usize = rows.iter().product();
    let space = Tensor::from_fn(&[count, n], |_| T::lit(rng.random_range(-1.0..1.0)));
    let tape = Tape::inference();
    let mut shape = rows.to_vec();
    shape.push(n + 1);
    m.project(tape.constant(space))?.value().reshape(&shape)
}

fn euclid<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-1.0..1.0)))
}

/// Runs the benchmark at fixed shapes: 3x3 convolution and batch norm on
/// `[B, 16, 16, 8]` maps, ReLU on the same, a 256 -> 64 fully connected
/// layer and a 64 -> 10 classifier head on `[8B]` rows.
pub fn run<T: Real>(opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    if opts.repeats == 0 {
        return Err(Error::Config("bench repeats must be positive".into()));
    }
    let m = Lorentz::<T>::with_k(T::lit(-1.0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let b = opts.batch.max(2);
    let (hw, c) = (16, 8);
    let map = [b, hw, hw];
    let rows = [8 * b];

    let xh = on_manifold(&m, &mut rng, &map, c)?;
    let xe: Tensor<T> = euclid(&mut rng, &[b, hw, hw, c]);
    let vh = on_manifold(&m, &mut rng, &rows, 256)?;
    let ve: Tensor<T> = euclid(&mut rng, &[rows[0], 256]);
    let hh = on_manifold(&m, &mut rng, &rows, 64)?;
    let he: Tensor<T> = euclid(&mut rng, &[rows[0], 64]);

    let (mut sh, mut se) = (ParamStore::new(), ParamStore::new());
    let spec = ConvSpec::new(c, c, 3, 1, 1);
    let lconv = LorentzConv2d::new(&mut sh, "conv", spec, m, &mut rng)?;
    let conv = Conv2d::new(&mut se, "conv", spec, &mut rng)?;
    let lbn = LorentzBatchNorm::new(&mut sh, "bn", c, m)?;
    let bn = BatchNorm::new(&mut se, "bn", c)?;
    let lrelu = LorentzRelu::new("relu", m);
    let relu = Relu::new("relu");
    let lfc = LorentzFc::new(&mut sh, "fc", 256, 64, Activation::Identity, m, &mut rng)?;
    let fc = Linear::new(&mut se, "fc", 256, 64, Activation::Identity, &mut rng)?;
    let mlr = LorentzMlr::new(&mut sh, "head", 64, 10, m, &mut rng)?;
    let lin = Linear::new(&mut se, "head", 64, 10, Activation::Identity, &mut rng)?;

    // hyperbolic then euclidean for each kind, in LAYER_KINDS order
    let jobs: Vec<Job<'_>> = vec![
        job(&lconv, &sh, &xh),
        job(&conv, &se, &xe),
        job(&lbn, &sh, &xh),
        job(&bn, &se, &xe),
        job(&lrelu, &sh, &xh),
        job(&relu, &se, &xe),
        job(&lfc, &sh, &vh),
        job(&fc, &se, &ve),
        job(&mlr, &sh, &hh),
        job(&lin, &se, &he),
    ];
    let shapes = [xh.shape(), xe.shape(), vh.shape(), ve.shape(), hh.shape(), he.shape()];
    let shape_of = |k: usize, v: usize| shapes[if k < 3 { v } else if k == 3 { 2 + v } else { 4 + v }];
    let mut times = time_jobs(&jobs, opts)?.into_iter();
    let mut out = Vec::with_capacity(jobs.len());
    for (k, name) in LAYER_KINDS.iter().enumerate() {
        let mut hr = row(name, Variant::Hyperbolic, shape_of(k, 0), times.next().unwrap());
        let er = row(name, Variant::Euclidean, shape_of(k, 1), times.next().unwrap());
        hr.ratio = hr.median_ms / er.median_ms;
        out.push(hr);
        out.push(er);
    }
    Ok(out)
}

pub fn write_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::training::csv_err)?;
    for r in rows {
        w.serialize(r).map_err(crate::training::csv_err)?;
    }
    w.flush()?;
    Ok(())
}
