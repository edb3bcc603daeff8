//! Optimizers, train/eval loops, metrics, and checkpoints.

pub mod checkpoint;
mod optim;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use optim::{clip_grad_norm, grad_norm, Optimizer, OptimizerConfig, OptimizerKind};

use crate::autograd::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{Ctx, ParamId};
use crate::models::{argmax_rows, Model};
use crate::real::Real;

fn default_batch_size() -> usize {
    64
}

fn default_drop_factor() -> f64 {
    0.1
}

fn default_clip() -> Option<f64> {
    Some(10.0)
}

fn default_true() -> bool {
    true
}

/// Loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Epochs (1-based) after which the learning rate is multiplied by
    /// `lr_drop_factor`.
    #[serde(default)]
    pub lr_drop_epochs: Vec<usize>,
    #[serde(default = "default_drop_factor")]
    pub lr_drop_factor: f64,
    /// Global gradient-norm ceiling.
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
    /// Shuffling seed; epoch `e` uses `seed + e`.
    #[serde(default)]
    pub seed: u64,
    /// Records NaN/Inf values in every forward and backward op.
    #[serde(default)]
    pub detect_anomaly: bool,
    /// Measure train metrics with an eval-mode pass after each epoch
    /// (otherwise use running averages over the epoch's batches).
    #[serde(default = "default_true")]
    pub eval_train: bool,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, optimizer: OptimizerConfig) -> Self {
        Self {
            epochs,
            batch_size,
            optimizer,
            lr_drop_epochs: Vec::new(),
            lr_drop_factor: default_drop_factor(),
            grad_clip: default_clip(),
            seed: 0,
            detect_anomaly: false,
            eval_train: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr_drop_factor > 0.0) {
            return Err(Error::Config("lr_drop_factor must be positive".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    /// Seconds since training started.
    pub wall_seconds: f64,
}

/// Everything a training run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: serde_json::Value,
    pub metrics: Vec<EpochMetrics>,
    pub wall_seconds: f64,
    /// Non-finite values seen by the anomaly detector.
    pub nan_events: usize,
    pub steps: u64,
}

impl RunRecord {
    pub fn last(&self, split: Split) -> Option<&EpochMetrics> {
        self.metrics.iter().rev().find(|m| m.split == split)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for m in &self.metrics {
            w.serialize(m).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Mean cross-entropy and accuracy in eval mode; never mutates the model.
pub fn evaluate<T: Real>(model: &Model<T>, data: &Dataset<T>, batch_size: usize) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for batch in data.batches(batch_size, None)? {
        let (x, y) = batch?;
        let tape = Tape::inference();
        let mut ctx = Ctx::new(&tape, model.store(), false);
        let logits = model.forward(&mut ctx, tape.constant(x))?;
        loss += logits.cross_entropy(&y)?.item().f64() * y.len() as f64;
        correct += argmax_rows(&logits.value()).iter().zip(&y).filter(|(p, l)| p == l).count();
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn param_norms<T: Real>(model: &Model<T>) -> String {
    model
        .store()
        .iter()
        .map(|(_, p)| format!("{}={:.3e}", p.name, p.value.norm().f64()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Trains `model` in place. `on_epoch` sees every metrics row as it is
/// produced. Batches of one example are skipped since batch statistics
/// need two.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train_set: &Dataset<T>,
    test_set: Option<&Dataset<T>>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<RunRecord> {
    cfg.validate()?;
    let mut opt = Optimizer::new(cfg.optimizer, model.store())?;
    let trainable: Vec<ParamId> = model.store().iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let start = Instant::now();
    let mut record = RunRecord {
        config: serde_json::json!({ "model": model.config(), "train": cfg }),
        metrics: Vec::new(),
        wall_seconds: 0.0,
        nan_events: 0,
        steps: 0,
    };
    let mut push = |record: &mut RunRecord, m: EpochMetrics| {
        on_epoch(&m);
        record.metrics.push(m);
    };
    for epoch in 1..=cfg.epochs {
        let mut run_loss = 0.0;
        let mut run_correct = 0usize;
        let mut seen = 0usize;
        for (bi, batch) in train_set.batches(cfg.batch_size, Some(cfg.seed.wrapping_add(epoch as u64)))?.enumerate() {
            let (x, y) = batch?;
            if y.len() < 2 {
                continue;
            }
            let tape = Tape::new();
            tape.set_detect_anomaly(cfg.detect_anomaly);
            let mut ctx = Ctx::new(&tape, model.store(), true);
            let logits = model.forward(&mut ctx, tape.constant(x))?;
            let loss = logits.cross_entropy(&y)?;
            let lv = loss.item().f64();
            if !lv.is_finite() {
                record.nan_events += tape.anomalies().len().max(1);
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    norms: param_norms(model),
                });
            }
            run_loss += lv * y.len() as f64;
            run_correct += argmax_rows(&logits.value()).iter().zip(&y).filter(|(p, l)| p == l).count();
            seen += y.len();
            tape.backward(loss)?;
            let mut grads: Vec<_> = trainable
                .iter()
                .map(|&id| {
                    let g = tape.grad(ctx.param(id)).unwrap_or_else(|| crate::tensor::Tensor::zeros(model.store().value(id).shape()));
                    (id, g)
                })
                .collect();
            let anomalies = tape.anomalies();
            if !anomalies.is_empty() {
                record.nan_events += anomalies.len();
                log::warn!("epoch {epoch} batch {bi}: {}", anomalies[0]);
            }
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut grads, c);
            }
            let updates = ctx.take_updates();
            opt.step(model.store_mut(), &grads)?;
            model.store_mut().apply_updates(updates);
        }
        if cfg.lr_drop_epochs.contains(&epoch) {
            opt.lr *= cfg.lr_drop_factor;
        }
        let (loss, accuracy) = if cfg.eval_train {
            evaluate(model, train_set, cfg.batch_size.max(256))?
        } else {
            let n = seen.max(1) as f64;
            (run_loss / n, run_correct as f64 / n)
        };
        push(
            &mut record,
            EpochMetrics {
                epoch,
                split: Split::Train,
                loss,
                accuracy,
                wall_seconds: start.elapsed().as_secs_f64(),
            },
        );
        if let Some(test) = test_set {
            let (loss, accuracy) = evaluate(model, test, cfg.batch_size.max(256))?;
            push(
                &mut record,
                EpochMetrics {
                    epoch,
                    split: Split::Test,
                    loss,
                    accuracy,
                    wall_seconds: start.elapsed().as_secs_f64(),
                },
            );
        }
        if !model.store().all_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                norms: param_norms(model),
            });
        }
    }
    record.wall_seconds = start.elapsed().as_secs_f64();
    record.steps = opt.steps();
    Ok(record)
}
