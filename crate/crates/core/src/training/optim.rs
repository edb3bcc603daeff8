//! SGD with momentum and Adam over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// SGD momentum; zero disables the velocity buffer.
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
    /// L2 coefficient added to the gradient.
    #[serde(default)]
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            momentum,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::sgd(lr, 0.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("optimizer.lr must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("optimizer.momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("optimizer betas must be in [0, 1)".into());
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("optimizer.eps must be positive and weight_decay non-negative".into());
        }
        Ok(())
    }
}

/// Optimizer with per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Real> {
    pub config: OptimizerConfig,
    /// Current learning rate (the schedule lowers it).
    pub lr: f64,
    step: u64,
    first: Vec<Option<Tensor<T>>>,
    second: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig, store: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            lr: config.lr,
            step: 0,
            first: vec![None; store.len()],
            second: vec![None; store.len()],
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from `(param, gradient)` pairs.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let lr = T::lit(self.lr);
        let wd = T::lit(c.weight_decay);
        for (id, g) in grads {
            let i = id.index();
            if i >= self.first.len() {
                return Err(Error::OutOfRange {
                    op: "optimizer step",
                    index: i,
                    len: self.first.len(),
                });
            }
            let p = store.value(*id);
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "optimizer step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let g = if c.weight_decay > 0.0 {
                g.zip_map(p, "weight decay", |g, p| g + wd * p)?
            } else {
                g.clone()
            };
            let update = match c.kind {
                OptimizerKind::Sgd if c.momentum > 0.0 => {
                    let mu = T::lit(c.momentum);
                    let v = match self.first[i].take() {
                        Some(v) => v.zip_map(&g, "momentum", |v, g| mu * v + g)?,
                        None => g,
                    };
                    let u = v.scale(lr);
                    self.first[i] = Some(v);
                    u
                }
                OptimizerKind::Sgd => g.scale(lr),
                OptimizerKind::Adam => {
                    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
                    let m = match self.first[i].take() {
                        Some(m) => m.zip_map(&g, "adam m", |m, g| b1 * m + (T::one() - b1) * g)?,
                        None => g.scale(T::one() - b1),
                    };
                    let v = match self.second[i].take() {
                        Some(v) => v.zip_map(&g, "adam v", |v, g| b2 * v + (T::one() - b2) * g * g)?,
                        None => g.map(|g| (T::one() - b2) * g * g),
                    };
                    let bc1 = T::one() - T::lit(c.beta1.powi(self.step as i32));
                    let bc2 = T::one() - T::lit(c.beta2.powi(self.step as i32));
                    let eps = T::lit(c.eps);
                    let u = m.zip_map(&v, "adam", |m, v| lr * (m / bc1) / ((v / bc2).sqrt() + eps))?;
                    self.first[i] = Some(m);
                    self.second[i] = Some(v);
                    u
                }
            };
            let p = store.value_mut(*id);
            *p = p.sub(&update)?;
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm<T: Real>(grads: &[(ParamId, Tensor<T>)]) -> f64 {
    grads
        .iter()
        .map(|(_, g)| g.data().iter().map(|v| v.f64() * v.f64()).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [(ParamId, Tensor<T>)], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            *g = g.scale(s);
        }
    }
    norm
}
