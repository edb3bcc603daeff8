//! Experiment configs, run directories, and the operations behind the
//! `hcnn` command line.
//!
//! A run is fully described by an [`ExperimentConfig`]: model, training
//! loop, data source and precision. Its SHA-256 digest names the run
//! directory `<out>/<timestamp>-<digest>/` holding `config.json`,
//! `metrics.csv`, `summary.json` and `model.ckpt`.

pub mod bench;
pub mod cli;
pub mod selftest;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autograd::GradcheckOptions;
use crate::data::{load_mnist, resolve_data_dir, wrapped_mixture, Dataset, MixtureSpec, MnistSplit};
use crate::error::{Error, Result};
use crate::models::{euclidean_twin, preset, Model, ModelConfig};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::training::checkpoint::{self, config_digest};
use crate::training::{evaluate, train, EpochMetrics, OptimizerConfig, Split, TrainConfig};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// A self-test, gradient check or other verification failed.
    pub const FAILURE: i32 = 1;
    pub const MISSING_DATASET: i32 = 2;
    pub const NON_FINITE_LOSS: i32 = 3;
    pub const CONFIG: i32 = 4;
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::DatasetMissing(_) | Error::IdxMagic { .. } | Error::IdxTruncated { .. } | Error::IdxCountMismatch { .. } => {
            exit::MISSING_DATASET
        }
        Error::NonFiniteLoss { .. } => exit::NON_FINITE_LOSS,
        Error::Config(_) | Error::Model(_) | Error::Json(_) | Error::Curvature(_) | Error::ArchitectureMismatch(_) => {
            exit::CONFIG
        }
        _ => exit::FAILURE,
    }
}

/// Arithmetic width of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl TryFrom<u8> for Precision {
    type Error = String;

    fn try_from(bits: u8) -> std::result::Result<Self, String> {
        match bits {
            32 => Ok(Self::F32),
            64 => Ok(Self::F64),
            _ => Err(format!("precision must be 32 or 64, got {bits}")),
        }
    }
}

impl From<Precision> for u8 {
    fn from(p: Precision) -> u8 {
        match p {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// IDX files under `<data dir>/mnist`.
    Mnist,
    /// A synthetic wrapped mixture, split into train and test.
    Mixture,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Use only the first `n` training examples.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
    /// Held-out share of a mixture.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub mixture: MixtureSpec,
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub precision: Precision,
}

fn config_err(e: serde_json::Error) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    /// Default experiment for a model preset: MNIST at 28x28 for the image
    /// models, the 2-class mixture for `mlr-only`.
    pub fn preset(name: &str, euclidean: bool) -> Result<Self> {
        if name == "mlr-only" {
            let model = preset(name, &[2], 2, false)?;
            return Ok(Self {
                model: if euclidean { euclidean_twin(&model) } else { model },
                train: TrainConfig::new(200, 32, OptimizerConfig::sgd(0.1, 0.0)),
                data: DataConfig {
                    source: DataSource::Mixture,
                    train_limit: None,
                    test_limit: None,
                    test_fraction: default_test_fraction(),
                    mixture: MixtureSpec::default(),
                },
                precision: Precision::F32,
            });
        }
        let model = preset(name, &[28, 28, 1], 10, euclidean)?;
        Ok(Self {
            model,
            train: TrainConfig::new(10, 64, OptimizerConfig::adam(1e-3)),
            data: DataConfig {
                source: DataSource::Mnist,
                train_limit: None,
                test_limit: None,
                test_fraction: default_test_fraction(),
                mixture: MixtureSpec::default(),
            },
            precision: Precision::F32,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the effective config.
    pub fn digest(&self) -> String {
        config_digest(self)
    }

    /// Applies dotted `key=value` overrides. Keys must already exist in the
    /// serialized config; values are parsed as JSON when possible and as
    /// strings otherwise, then type-checked by deserializing the result.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut v = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            let (key, raw) = split_override(o.as_ref())?;
            set_path(&mut v, key, raw)?;
        }
        let cfg: Self = serde_json::from_value(v).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        Model::<f64>::build(&self.model)?;
        let d = &self.data;
        if !(0.0..1.0).contains(&d.test_fraction) {
            return Err(Error::Config(format!("data.test_fraction must be in [0, 1), got {}", d.test_fraction)));
        }
        let (input, classes) = match d.source {
            DataSource::Mnist => (vec![28, 28, 1], 10),
            DataSource::Mixture => (vec![d.mixture.dim], d.mixture.classes),
        };
        if self.model.input != input || self.model.classes != classes {
            return Err(Error::Config(format!(
                "model expects input {:?} with {} classes, data source {:?} provides {input:?} with {classes}",
                self.model.input, self.model.classes, d.source
            )));
        }
        Ok(())
    }
}

fn split_override(s: &str) -> Result<(&str, &str)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim(), v.trim())),
        _ => Err(Error::Config(format!("override `{s}` is not of the form key=value"))),
    }
}

/// Short names accepted in overrides and sweeps.
fn expand_alias(key: &str) -> &str {
    match key {
        "K" | "curvature" => "model.curvature",
        "lr" => "train.optimizer.lr",
        "epochs" => "train.epochs",
        "seed" => "model.seed",
        _ => key,
    }
}

fn set_path(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let key = expand_alias(key);
    let unknown = |upto: &str| Error::Config(format!("unknown config key `{upto}` (in override `{key}`)"));
    let mut cur = root;
    let mut path = String::new();
    for seg in key.split('.') {
        if !path.is_empty() {
            path.push('.');
        }
        path.push_str(seg);
        cur = match cur {
            Value::Object(map) => map.get_mut(seg).ok_or_else(|| unknown(&path))?,
            Value::Array(items) => {
                let i: usize = seg.parse().map_err(|_| unknown(&path))?;
                items.get_mut(i).ok_or_else(|| unknown(&path))?
            }
            _ => return Err(unknown(&path)),
        };
    }
    *cur = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Loads the train and test sets a config asks for.
pub fn load_data<T: Real>(cfg: &DataConfig, data_dir: Option<&Path>) -> Result<(Dataset<T>, Dataset<T>)> {
    let limit = |ds: Dataset<T>, n: Option<usize>| match n {
        Some(n) if n < ds.len() => ds.take(n),
        _ => Ok(ds),
    };
    match cfg.source {
        DataSource::Mnist => {
            let dir = resolve_data_dir(data_dir).join("mnist");
            let train = load_mnist::<T>(&dir, MnistSplit::Train)?;
            let test = load_mnist::<T>(&dir, MnistSplit::Test)?;
            Ok((limit(train, cfg.train_limit)?, limit(test, cfg.test_limit)?))
        }
        DataSource::Mixture => {
            let all = wrapped_mixture(&cfg.mixture)?.cast::<T>();
            let mut parts = all.split(&[1.0 - cfg.test_fraction, cfg.test_fraction], cfg.mixture.seed)?.into_iter();
            let (train, test) = (parts.next().expect("two parts"), parts.next().expect("two parts"));
            Ok((limit(train, cfg.train_limit)?, limit(test, cfg.test_limit)?))
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub wall_seconds: f64,
    pub config_digest: String,
    pub epochs: usize,
    pub steps: u64,
    pub nan_events: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
}

/// Where a run reads data and writes artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    pub data_dir: Option<PathBuf>,
}

/// Creates `<out>/<timestamp>-<digest prefix>`, adding a numeric suffix
/// if that name is taken.
pub fn create_run_dir(out: &Path, digest: &str) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-{}", &digest[..12.min(digest.len())]);
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("unbounded suffix search")
}

/// Trains per `cfg` and writes the run directory.
pub fn train_run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, opts),
        Precision::F64 => train_typed::<f64>(cfg, opts),
    }
}

fn train_typed<T: Real>(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let (train_set, test_set) = load_data::<T>(&cfg.data, opts.data_dir.as_deref())?;
    let mut model = Model::<T>::build(&cfg.model)?;
    let digest = cfg.digest();
    let dir = create_run_dir(&opts.out, &digest)?;
    fs::write(dir.join("config.json"), cfg.to_json())?;
    log::info!("run {} | {} parameters", dir.display(), model.num_params());

    let mut csv = csv::Writer::from_path(dir.join("metrics.csv")).map_err(crate::training::csv_err)?;
    let mut csv_error = None;
    let result = train(&mut model, &train_set, Some(&test_set), &cfg.train, |m: &EpochMetrics| {
        log::info!(
            "epoch {:>3} {:<5} loss {:.4} acc {:.4} ({:.1}s)",
            m.epoch,
            format!("{:?}", m.split).to_lowercase(),
            m.loss,
            m.accuracy,
            m.wall_seconds
        );
        if let Err(e) = csv.serialize(m).and_then(|_| csv.flush().map_err(Into::into)) {
            csv_error.get_or_insert(e);
        }
    });
    csv.flush()?;
    if let Some(e) = csv_error {
        return Err(crate::training::csv_err(e));
    }
    let record = result?;
    checkpoint::save(&model, &dir.join("model.ckpt"))?;
    let (tr, te) = (
        record.last(Split::Train).cloned(),
        record.last(Split::Test).cloned(),
    );
    let nan = f64::NAN;
    let summary = Summary {
        final_train_acc: tr.as_ref().map_or(nan, |m| m.accuracy),
        final_test_acc: te.as_ref().map_or(nan, |m| m.accuracy),
        final_train_loss: tr.as_ref().map_or(nan, |m| m.loss),
        final_test_loss: te.as_ref().map_or(nan, |m| m.loss),
        wall_seconds: record.wall_seconds,
        config_digest: digest,
        epochs: cfg.train.epochs,
        steps: record.steps,
        nan_events: record.nan_events,
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(RunOutcome { dir, summary })
}

/// Metrics of a saved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub train_acc: f64,
    pub train_loss: f64,
    pub test_acc: f64,
    pub test_loss: f64,
    pub config_digest: String,
}

/// Evaluates the checkpoint of a run directory (or `checkpoint`, if
/// given) on the run's data. Writes nothing.
pub fn eval_run(run_dir: &Path, checkpoint: Option<&Path>, data_dir: Option<&Path>) -> Result<EvalReport> {
    let cfg = ExperimentConfig::load(&run_dir.join("config.json"))?;
    let ckpt = checkpoint.map_or_else(|| run_dir.join("model.ckpt"), Path::to_path_buf);
    match cfg.precision {
        Precision::F32 => eval_typed::<f32>(&cfg, &ckpt, data_dir),
        Precision::F64 => eval_typed::<f64>(&cfg, &ckpt, data_dir),
    }
}

fn eval_typed<T: Real>(cfg: &ExperimentConfig, ckpt: &Path, data_dir: Option<&Path>) -> Result<EvalReport> {
    let (train_set, test_set) = load_data::<T>(&cfg.data, data_dir)?;
    let mut model = Model::<T>::build(&cfg.model)?;
    checkpoint::load_into(&mut model, ckpt)?;
    let bs = cfg.train.batch_size.max(256);
    let (train_loss, train_acc) = evaluate(&model, &train_set, bs)?;
    let (test_loss, test_acc) = evaluate(&model, &test_set, bs)?;
    Ok(EvalReport {
        train_acc,
        train_loss,
        test_acc,
        test_loss,
        config_digest: cfg.digest(),
    })
}

/// Parses `key=v1,v2,...`.
pub fn parse_sweep(s: &str) -> Result<(String, Vec<String>)> {
    let (key, vals) = split_override(s)?;
    let values: Vec<String> = vals.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::Config(format!("sweep `{s}` lists no values")));
    }
    Ok((key.to_string(), values))
}

/// One run per sweep value, sequentially or on one thread each. Every
/// configuration is validated before any run starts.
pub fn sweep(
    base: &ExperimentConfig,
    key: &str,
    values: &[String],
    parallel: bool,
    opts: &RunOptions,
) -> Result<Vec<(String, Result<RunOutcome>)>> {
    let cfgs = values
        .iter()
        .map(|v| base.with_overrides(&[format!("{key}={v}")]).map(|c| (v.clone(), c)))
        .collect::<Result<Vec<_>>>()?;
    if !parallel {
        return Ok(cfgs.into_iter().map(|(v, c)| (v, train_run(&c, opts))).collect());
    }
    Ok(std::thread::scope(|s| {
        let handles: Vec<_> = cfgs
            .into_iter()
            .map(|(v, c)| (v, s.spawn(move || train_run(&c, opts))))
            .collect();
        handles
            .into_iter()
            .map(|(v, h)| (v, h.join().unwrap_or_else(|_| Err(Error::Config("sweep worker panicked".into())))))
            .collect()
    }))
}

/// One row of the gradient-check report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub layer: String,
    pub kind: String,
    pub params: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Per-layer and whole-model finite-difference checks of a preset at
/// 64-bit, on a small random batch.
pub fn gradcheck_preset(name: &str, tol: f64, batch: usize, seed: u64) -> Result<Vec<GradcheckRow>> {
    let cfg = ExperimentConfig::preset(name, false)?.model;
    let model = Model::<f64>::build(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = batch.max(2);
    let mut shape = vec![b];
    shape.extend(&cfg.input);
    let x = Tensor::from_fn(&shape, |_| rng.random_range(0.0..1.0));
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..cfg.classes)).collect();
    let opts = GradcheckOptions {
        eps: 1e-5,
        tol,
        max_coords: Some(48),
        seed,
        ..Default::default()
    };
    let mut rows: Vec<GradcheckRow> = model
        .layer_gradchecks(&x, true, &opts)?
        .into_iter()
        .map(|c| GradcheckRow {
            layer: c.layer,
            kind: c.kind,
            params: c.params,
            checked: c.report.checked,
            max_rel_err: c.report.max_rel_err,
            passed: c.report.passed(),
        })
        .collect();
    let whole = model.gradcheck(&x, &labels, true, &opts)?;
    rows.push(GradcheckRow {
        layer: "model".into(),
        kind: format!("{} composite, cross-entropy", cfg.architecture),
        params: model.num_params(),
        checked: whole.checked,
        max_rel_err: whole.max_rel_err,
        passed: whole.passed(),
    });
    Ok(rows)
}

pub fn write_gradcheck_csv<W: std::io::Write>(rows: &[GradcheckRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(crate::training::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
