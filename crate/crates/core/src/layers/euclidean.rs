//! Euclidean counterparts used by twins and hybrid backbones.

use rand::Rng;

use super::lorentz::{gather_patches, ConvSpec};
use super::{kaiming, Activation, Ctx, Layer, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// `psi(x W^T + b)` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(&format!("{name}.weight"), kaiming(rng, &[out_dim, in_dim], in_dim))?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            name: name.to_string(),
            weight,
            bias,
            in_dim,
            out_dim,
            activation,
        })
    }
}

impl<T: Real> Layer<T> for Linear {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward<'t>(&self, ctx: &mut Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.linear(ctx.param(self.weight), Some(ctx.param(self.bias)))?;
        Ok(self.activation.apply(y))
    }

    fn describe(&self) -> String {
        format!("Linear {} -> {} ({:?})", self.in_dim, self.out_dim, self.activation)
    }
}

/// Zero-padded convolution on channel-last maps via patch gathering.
#[derive(Debug, Clone)]
pub struct Conv2d {
    name: String,
    pub spec: ConvSpec,
    pub linear: Linear,
}

impl Conv2d {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec, rng: &mut R) -> Result<Self> {
        let linear = Linear::new(
            store,
            name,
            spec.in_channels * spec.taps(),
            spec.out_channels,
            Activation::Identity,
            rng,
        )?;
        Ok(Self {
            name: name.to_string(),
            spec,
            linear,
        })
    }
}

impl<T: Real> Layer<T> for Conv2d {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward<'t>(&self, ctx: &mut Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[3] != self.spec.in_channels {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: shape,
                rhs: vec![0, 0, 0, self.spec.in_channels],
            });
        }
        let geom = self.spec.geometry(shape[1], shape[2])?;
        let patches = gather_patches(x, &geom, &Tensor::zeros(&[self.spec.in_channels]))?;
        let flat = patches.reshape(&[shape[0], geom.positions(), geom.taps() * self.spec.in_channels])?;
        self.linear
            .forward(ctx, flat)?
            .reshape(&[shape[0], geom.out_h(), geom.out_w(), self.spec.out_channels])
    }

    fn describe(&self) -> String {
        let s = &self.spec;
        format!(
            "Conv{} {}->{} k{}x{} s{} p{}",
            if s.transposed { "Transpose2d" } else { "2d" },
            s.in_channels,
            s.out_channels,
            s.kernel.0,
            s.kernel.1,
            s.stride,
            s.padding
        )
    }
}

/// Per-channel batch normalization over every axis but the last.
#[derive(Debug, Clone)]
pub struct BatchNorm<T: Real> {
    name: String,
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            channels,
            gamma: store.add(&format!("{name}.gamma"), Tensor::ones(&[channels]))?,
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::ones(&[channels]))?,
            momentum: T::lit(0.1),
            eps: T::lit(1e-5),
        })
    }
}

impl<T: Real> Layer<T> for BatchNorm<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward<'t>(&self, ctx: &mut Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() < 2 || shape[shape.len() - 1] != self.channels {
            return Err(Error::Shape {
                op: "batch_norm",
                lhs: shape,
                rhs: vec![0, self.channels],
            });
        }
        let axes: Vec<usize> = (0..shape.len() - 1).collect();
        let (mean, var) = if ctx.is_train() {
            if shape[0] < 2 {
                return Err(Error::InvalidArgument {
                    op: "batch_norm",
                    msg: format!("train mode needs a batch of at least 2, got {}", shape[0]),
                });
            }
            let mean = x.mean(&axes, false)?;
            let var = x.sub(mean)?.square().mean(&axes, false)?;
            let eta = self.momentum;
            let blend = |old: &Tensor<T>, new: &Tensor<T>| {
                old.zip_map(new, "running stats", |o, n| (T::one() - eta) * o + eta * n)
            };
            let rm = blend(&ctx.param(self.running_mean).value(), &mean.value())?;
            let rv = blend(&ctx.param(self.running_var).value(), &var.value())?;
            ctx.push_update(self.running_mean, rm);
            ctx.push_update(self.running_var, rv);
            (mean, var)
        } else {
            (ctx.param(self.running_mean), ctx.param(self.running_var))
        };
        let xhat = x.sub(mean)?.div(var.add_scalar(self.eps).sqrt_clamped())?;
        xhat.mul(ctx.param(self.gamma))?.add(ctx.param(self.beta))
    }

    fn describe(&self) -> String {
        format!("BatchNorm {}", self.channels)
    }
}

#[derive(Debug, Clone)]
pub struct Relu {
    name: String,
}

impl Relu {
    pub fn new(name: &str) -> Self {
        Self { name: name.to_string() }
    }
}

impl<T: Real> Layer<T> for Relu {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward<'t>(&self, _ctx: &mut Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.relu())
    }

    fn describe(&self) -> String {
        "Relu".into()
    }
}
