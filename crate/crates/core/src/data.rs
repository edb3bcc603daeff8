//! Datasets: synthetic wrapped-Gaussian mixtures on the hyperboloid and
//! IDX (MNIST-format) image files.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::manifold::{Curvature, Lorentz};
use crate::real::Real;
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled examples. `inputs` is `[N, H, W, C]` for images or `[N, n+1]`
/// hyperboloid points when `curvature` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Set for datasets of manifold points.
    pub curvature: Option<Curvature<T>>,
    pub seed: Option<u64>,
}

impl<T: Real> Dataset<T> {
    pub fn new(inputs: Tensor<T>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let n = inputs.shape().first().copied().unwrap_or(0);
        if n == 0 {
            return Err(Error::EmptyBatch("dataset"));
        }
        if n != labels.len() {
            return Err(Error::InvalidArgument {
                op: "dataset",
                msg: format!("{n} inputs but {} labels", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::OutOfRange {
                op: "dataset label",
                index: bad,
                len: classes,
            });
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            curvature: None,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one example.
    pub fn example_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Model-facing features: space components of manifold points (the
    /// space-lift projection restores them exactly), raw inputs otherwise.
    pub fn features(&self) -> Result<Tensor<T>> {
        match self.curvature {
            Some(_) => {
                let w = self.inputs.last_dim();
                self.inputs.narrow(1, 1, w - 1)
            }
            None => Ok(self.inputs.clone()),
        }
    }

    /// Shape of one model-facing feature row.
    pub fn feature_shape(&self) -> Vec<usize> {
        let mut s = self.example_shape().to_vec();
        if self.curvature.is_some() {
            *s.last_mut().expect("rank >= 2") -= 1;
        }
        s
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            inputs: self.inputs.index_select(0, indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            curvature: self.curvature,
            seed: self.seed,
        })
    }

    /// The first `n` examples.
    pub fn take(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Splits by fractions after a seeded shuffle. Fractions may sum to
    /// less than one; the remainder is dropped.
    pub fn split(&self, fractions: &[f64], seed: u64) -> Result<Vec<Self>> {
        let total: f64 = fractions.iter().sum();
        if fractions.iter().any(|&f| !(f >= 0.0)) || total > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument {
                op: "split",
                msg: format!("fractions {fractions:?} must be non-negative and sum to at most 1"),
            });
        }
        let order = permutation(self.len(), seed);
        let mut out = Vec::with_capacity(fractions.len());
        let mut start = 0;
        let mut acc = 0.0;
        for &f in fractions {
            acc += f;
            let end = ((acc * self.len() as f64).round() as usize).min(self.len());
            out.push(self.subset(&order[start..end])?);
            start = end;
        }
        Ok(out)
    }

    /// Mini-batches in a seeded random order (`None` keeps file order).
    /// Every example appears exactly once; the last batch may be short.
    pub fn batches(&self, batch_size: usize, seed: Option<u64>) -> Result<Batches<'_, T>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument {
                op: "batches",
                msg: "batch size must be positive".into(),
            });
        }
        let order = match seed {
            Some(s) => permutation(self.len(), s),
            None => (0..self.len()).collect(),
        };
        Ok(Batches {
            data: self,
            order,
            batch_size,
            pos: 0,
        })
    }

    pub fn cast<U: Real>(&self) -> Dataset<U> {
        Dataset {
            inputs: self.inputs.cast(),
            labels: self.labels.clone(),
            classes: self.classes,
            curvature: self.curvature.map(|c| c.cast()),
            seed: self.seed,
        }
    }
}

/// A seeded permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

/// Iterator over `(features, labels)` mini-batches.
pub struct Batches<'a, T: Real> {
    data: &'a Dataset<T>,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<T: Real> Batches<'_, T> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl<T: Real> Iterator for Batches<'_, T> {
    type Item = Result<(Tensor<T>, Vec<usize>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(self.data.subset(idx).and_then(|d| Ok((d.features()?, d.labels))))
    }
}

/// Parameters of a wrapped Gaussian mixture on `L^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub dim: usize,
    pub classes: usize,
    pub per_class: usize,
    /// Standard deviation of the tangent noise.
    pub spread: f64,
    /// Geodesic distance between neighbouring class means.
    pub separation: f64,
    pub curvature: Curvature<f64>,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            dim: 2,
            classes: 2,
            per_class: 100,
            spread: 0.1,
            separation: 4.0,
            curvature: Curvature::default(),
            seed: 0,
        }
    }
}

impl MixtureSpec {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument { op: "wrapped_mixture", msg });
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.classes < 2 {
            return bad(format!("classes must be at least 2, got {}", self.classes));
        }
        if self.per_class == 0 {
            return bad("per_class must be positive".into());
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return bad(format!("spread must be non-negative, got {}", self.spread));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return bad(format!("separation must be positive, got {}", self.separation));
        }
        Ok(())
    }

    /// Class means `[C, dim+1]`: `exp0(r u_c)` for unit directions `u_c`
    /// evenly spaced on a circle in the first two space axes, with `r` such
    /// that neighbouring means sit exactly `separation` apart.
    pub fn means(&self) -> Result<Tensor<f64>> {
        self.validate()?;
        let m = Lorentz::new(self.curvature);
        let c = self.classes;
        let dirs = Tensor::from_fn(&[c, self.dim], |i| {
            let (k, j) = (i / self.dim, i % self.dim);
            let ang = std::f64::consts::TAU * k as f64 / c as f64;
            match j {
                0 => ang.cos(),
                1 => ang.sin(),
                _ => 0.0,
            }
        });
        let tape = Tape::inference();
        let at = |r: f64| -> Result<Tensor<f64>> { Ok(m.exp0(tape.constant(dirs.scale(r)))?.value().as_ref().clone()) };
        let gap = |r: f64| -> Result<f64> {
            let p = tape.constant(at(r)?);
            let d = m.distance(p.narrow(0, 0, 1)?, p.narrow(0, 1, 1)?)?;
            Ok(d.item())
        };
        // gap(r) is increasing in r; bracket then bisect
        let (mut lo, mut hi) = (0.0, self.separation);
        while gap(hi)? < self.separation {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if gap(mid)? < self.separation {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi))
    }
}

/// Samples `exp_{mu_c}(PT_{0 -> mu_c}([0, v]))` with `v ~ N(0, spread^2 I)`,
/// grouped by class.
pub fn wrapped_mixture(spec: &MixtureSpec) -> Result<Dataset<f64>> {
    let means = spec.means()?;
    let m = Lorentz::new(spec.curvature);
    let (n, c, per) = (spec.dim, spec.classes, spec.per_class);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let tape = Tape::inference();
    let mut parts = Vec::with_capacity(c);
    for k in 0..c {
        let v = Tensor::from_fn(&[per, n + 1], |i| {
            if i % (n + 1) == 0 {
                0.0
            } else {
                spec.spread * noise.sample(&mut rng)
            }
        });
        let mu = tape.constant(means.narrow(0, k, 1)?);
        let w = m.transport_from_origin(mu, tape.constant(v))?;
        parts.push(m.exp(mu, w)?.value().as_ref().clone());
    }
    let refs: Vec<&Tensor<f64>> = parts.iter().collect();
    let labels = (0..c).flat_map(|k| std::iter::repeat_n(k, per)).collect();
    let mut ds = Dataset::new(Tensor::concat(&refs, 0)?, labels, c)?;
    ds.curvature = Some(spec.curvature);
    ds.seed = Some(spec.seed);
    Ok(ds)
}

/// Labels by the geodesically nearest class mean.
pub fn nearest_mean_predict(points: &Tensor<f64>, means: &Tensor<f64>, curvature: Curvature<f64>) -> Result<Vec<usize>> {
    let m = Lorentz::new(curvature);
    let tape = Tape::inference();
    let c = means.shape()[0];
    let w = points.last_dim();
    let x = tape.constant(points.reshape(&[points.shape()[0], 1, w])?);
    let mu = tape.constant(means.reshape(&[1, c, w])?);
    let d = m.distance(x, mu)?.value();
    Ok(d.data()
        .chunks(c)
        .map(|row| (0..c).min_by(|&i, &j| row[i].total_cmp(&row[j])).expect("c >= 1"))
        .collect())
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::DatasetMissing(path.to_path_buf()));
    }
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        // a cut-off gzip stream is a truncated file
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|_| Error::IdxTruncated {
                path: path.to_path_buf(),
                expected: raw.len() + 1,
                found: raw.len(),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

struct Idx {
    dims: Vec<usize>,
    payload: Vec<u8>,
}

fn parse_idx(path: &Path, bytes: Vec<u8>, expected: u32) -> Result<Idx> {
    if bytes.len() < 4 {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: 4,
            found: bytes.len(),
        });
    }
    let magic = be_u32(&bytes, 0);
    if magic != expected {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            found: magic,
            expected,
        });
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..rank).map(|i| be_u32(&bytes, 4 + 4 * i) as usize).collect();
    let need = header + dims.iter().product::<usize>();
    if bytes.len() != need {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: need,
            found: bytes.len(),
        });
    }
    Ok(Idx {
        dims,
        payload: bytes[header..].to_vec(),
    })
}

/// Loads an IDX image/label pair (plain or gzip). Pixels are scaled to
/// `[0, 1]`; images become `[N, H, W, 1]`.
pub fn load_idx<T: Real>(images: &Path, labels: &Path) -> Result<Dataset<T>> {
    let img = parse_idx(images, read_maybe_gz(images)?, IMAGES_MAGIC)?;
    let lab = parse_idx(labels, read_maybe_gz(labels)?, LABELS_MAGIC)?;
    if img.dims[0] != lab.dims[0] {
        return Err(Error::IdxCountMismatch {
            images: img.dims[0],
            labels: lab.dims[0],
        });
    }
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    let scale = 1.0 / 255.0;
    let inputs = Tensor::new(
        &[n, h, w, 1],
        img.payload.iter().map(|&p| T::lit(p as f64 * scale)).collect(),
    )?;
    let labels: Vec<usize> = lab.payload.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    Dataset::new(inputs, labels, classes)
}

fn idx_bytes(magic: u32, dims: &[usize], payload: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend(payload);
    out
}

/// IDX encodings `(images, labels)` of an image dataset. Pixels are
/// rounded back to bytes, so a loaded file re-encodes byte-exactly.
pub fn encode_idx<T: Real>(ds: &Dataset<T>) -> Result<(Vec<u8>, Vec<u8>)> {
    let s = ds.inputs.shape();
    if s.len() != 4 || s[3] != 1 {
        return Err(Error::InvalidArgument {
            op: "encode_idx",
            msg: format!("expected [N, H, W, 1] images, got {s:?}"),
        });
    }
    if ds.labels.iter().any(|&l| l > 255) {
        return Err(Error::InvalidArgument {
            op: "encode_idx",
            msg: "labels must fit in a byte".into(),
        });
    }
    let px = ds.inputs.data().iter().map(|v| (v.f64() * 255.0).round().clamp(0.0, 255.0) as u8);
    let images = idx_bytes(IMAGES_MAGIC, &[s[0], s[1], s[2]], px);
    let labels = idx_bytes(LABELS_MAGIC, &[s[0]], ds.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

/// Writes an IDX pair, gzip-compressed when the path ends in `.gz`.
pub fn write_idx<T: Real>(ds: &Dataset<T>, images: &Path, labels: &Path) -> Result<()> {
    let (img, lab) = encode_idx(ds)?;
    for (path, bytes) in [(images, img), (labels, lab)] {
        let file = std::fs::File::create(path)?;
        if path.extension().is_some_and(|e| e == "gz") {
            let mut enc = GzEncoder::new(file, Compression::default());
            enc.write_all(&bytes)?;
            enc.finish()?;
        } else {
            let mut f = file;
            f.write_all(&bytes)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

/// Paths of an MNIST split under `dir`, preferring gzip files.
pub fn mnist_paths(dir: &Path, split: MnistSplit) -> (PathBuf, PathBuf) {
    let stem = match split {
        MnistSplit::Train => "train",
        MnistSplit::Test => "t10k",
    };
    let pick = |kind: &str| {
        let gz = dir.join(format!("{stem}-{kind}.gz"));
        if gz.exists() {
            gz
        } else {
            dir.join(format!("{stem}-{kind}"))
        }
    };
    (pick("images-idx3-ubyte"), pick("labels-idx1-ubyte"))
}

pub fn load_mnist<T: Real>(dir: &Path, split: MnistSplit) -> Result<Dataset<T>> {
    let (img, lab) = mnist_paths(dir, split);
    load_idx(&img, &lab)
}

/// Environment variable naming the dataset cache root.
pub const DATA_DIR_ENV: &str = "HCNN_DATA_DIR";

/// Dataset root: explicit flag, then `$HCNN_DATA_DIR`, then `./data`, then
/// the `data/` directory shipped with the source tree.
pub fn resolve_data_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(DATA_DIR_ENV) {
        return PathBuf::from(p);
    }
    let local = PathBuf::from("data");
    if local.join("mnist").exists() {
        return local;
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[cfg(test)]
mod tests;
