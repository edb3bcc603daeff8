//! Network layers and the parameter plumbing they share.
//!
//! Parameters live in a [`ParamStore`] outside any tape. Each training step
//! binds the store onto a fresh [`Tape`] through a [`Ctx`]; layers hold only
//! [`ParamId`]s and look their variables up in the context. Forward passes
//! take `&self`: batch-norm running statistics are queued on the context and
//! applied by the caller with [`ParamStore::apply_updates`].

mod euclidean;
mod lorentz;

use std::rc::Rc;

use rand::Rng;
use rand_distr::StandardNormal;

pub use euclidean::{BatchNorm, Conv2d, Linear, Relu};
pub use lorentz::{
    feature_clip, gather_patches, hcat, hcat_rows, hyperplane_normal, lorentz_mlr, lorentz_relu, lorentz_residual,
    softplus_inverse, ConvSpec, LorentzBatchNorm, LorentzConv2d, LorentzFc, LorentzMlr, LorentzRelu,
};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::manifold::Curvature;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers (running statistics) are saved and restored but never
    /// receive gradients.
    pub trainable: bool,
}

/// Named parameters and buffers of a model, in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Real> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Model(format!("duplicate parameter name `{name}`")));
        }
        self.params.push(Param {
            name: name.to_string(),
            value,
            trainable,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, false)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) {
        for (id, v) in updates {
            self.params[id.0].value = v;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }
}

/// An intermediate activation captured during a traced forward pass.
#[derive(Debug, Clone)]
pub struct Traced<T: Real> {
    pub layer: String,
    pub value: Rc<Tensor<T>>,
    /// Set for activations that live on the hyperboloid.
    pub curvature: Option<Curvature<T>>,
}

/// Per-pass state: the tape, bound parameters, mode, and queued updates.
pub struct Ctx<'t, T: Real> {
    pub tape: &'t Tape<T>,
    vars: Vec<Var<'t, T>>,
    train: bool,
    updates: Vec<(ParamId, Tensor<T>)>,
    trace: Option<Vec<Traced<T>>>,
}

impl<'t, T: Real> Ctx<'t, T> {
    /// Binds every parameter: trainable ones as leaves, buffers as constants.
    pub fn new(tape: &'t Tape<T>, store: &ParamStore<T>, train: bool) -> Self {
        let vars = store
            .params
            .iter()
            .map(|p| {
                if p.trainable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        Self {
            tape,
            vars,
            train,
            updates: Vec::new(),
            trace: None,
        }
    }

    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    /// Rebinds a parameter to an arbitrary variable on the same tape.
    pub fn bind(&mut self, id: ParamId, var: Var<'t, T>) {
        self.vars[id.0] = var;
    }

    /// Bound variables in registration order.
    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn push_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.updates.push((id, value));
    }

    pub fn take_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.updates)
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn record(&mut self, layer: &str, value: Var<'t, T>, curvature: Option<Curvature<T>>) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(Traced {
                layer: layer.to_string(),
                value: value.value(),
                curvature,
            });
        }
    }

    pub fn take_trace(&mut self) -> Vec<Traced<T>> {
        self.trace.take().unwrap_or_default()
    }
}

/// A differentiable layer.
pub trait Layer<T: Real> {
    fn name(&self) -> &str;

    fn forward<'t>(&self, ctx: &mut Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>>;

    /// One-line description for architecture summaries.
    fn describe(&self) -> String;
}

/// Pointwise nonlinearity applied to Euclidean pre-activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
}

impl Activation {
    pub fn apply<'t, T: Real>(self, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.relu(),
        }
    }
}

/// Kaiming-normal weights: `N(0, 2 / fan_in)`.
pub fn kaiming<T: Real, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(std * rng.sample::<f64, _>(StandardNormal)))
}

/// Uniform weights in `[-bound, bound]`.
pub fn uniform<T: Real, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)))
}
