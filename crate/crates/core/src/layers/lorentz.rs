//! Lorentz-model layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{kaiming, uniform, Activation, Ctx, Layer, ParamId, ParamStore};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::manifold::{Lorentz, VarianceMetric};
use crate::real::Real;
use crate::tensor::{PatchGeometry, Tensor};

/// Lorentz direct concatenation of points along the last axis:
/// time `sqrt(sum x_{i,t}^2 + (N-1)/K)`, space the concatenated space parts.
pub fn hcat<'t, T: Real>(m: &Lorentz<T>, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = *parts.first().ok_or(Error::InvalidArgument {
        op: "hcat",
        msg: "no inputs".into(),
    })?;
    if parts.len() == 1 {
        return Ok(first);
    }
    let ax = first.rank() - 1;
    let mut sq = m.time(first)?.square();
    let mut spaces = vec![m.space(first)?];
    for &p in &parts[1..] {
        sq = sq.add(m.time(p)?.square())?;
        spaces.push(m.space(p)?);
    }
    let n = T::lit((parts.len() - 1) as f64);
    let time = sq.add_scalar(n / m.curvature.k()).sqrt_clamped();
    spaces.insert(0, time);
    Var::concat(&spaces, ax)
}

/// [`hcat`] of the `N` points stacked on the second-to-last axis:
/// `[.., N, n+1] -> [.., N*n + 1]`.
pub fn hcat_rows<'t, T: Real>(m: &Lorentz<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::InvalidArgument {
            op: "hcat_rows",
            msg: format!("need rank >= 2, got {shape:?}"),
        });
    }
    let r = shape.len();
    let (count, width) = (shape[r - 2], shape[r - 1]);
    let mut out_shape = shape[..r - 2].to_vec();
    let time = m.time(x)?.square().sum(&[r - 2], false)?;
    let time = time
        .add_scalar(T::lit(count as f64 - 1.0) / m.curvature.k())
        .sqrt_clamped();
    out_shape.push((width - 1) * count);
    let space = m.space(x)?.reshape(&out_shape)?;
    Var::concat(&[time, space], r - 2)
}

/// Patches of a channel-last map `[B, H, W, C]` as `[B, P, taps, C]`, with
/// padded or interleaved taps filled by `pad` (shape `[C]`).
pub fn gather_patches<'t, T: Real>(x: Var<'t, T>, geom: &PatchGeometry, pad: &Tensor<T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() != 4 || shape[1] != geom.in_h || shape[2] != geom.in_w {
        return Err(Error::Shape {
            op: "gather_patches",
            lhs: shape,
            rhs: vec![0, geom.in_h, geom.in_w, 0],
        });
    }
    let (b, c) = (shape[0], shape[3]);
    let pixels = geom.in_h * geom.in_w;
    let pad_row = x.tape().constant(pad.reshape(&[1, 1, c])?.broadcast_to(&[b, 1, c])?);
    let flat = Var::concat(&[x.reshape(&[b, pixels, c])?, pad_row], 1)?;
    flat.index_select(1, &geom.gather_indices(pixels))?
        .reshape(&[b, geom.positions(), geom.taps(), c])
}

/// `project(x_s + y_s)`.
pub fn lorentz_residual<'t, T: Real>(m: &Lorentz<T>, x: Var<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
    if x.shape() != y.shape() {
        return Err(Error::Shape {
            op: "lorentz_residual",
            lhs: x.shape(),
            rhs: y.shape(),
        });
    }
    m.project(m.space(x)?.add(m.space(y)?)?)
}

/// `project(relu(x_s))`.
pub fn lorentz_relu<'t, T: Real>(m: &Lorentz<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    m.project(m.space(x)?.relu())
}

/// Max-norm clipping over the last axis: `x min(1, r / ||x||)`.
pub fn feature_clip<'t, T: Real>(x: Var<'t, T>, r: T) -> Result<Var<'t, T>> {
    if !(r > T::zero()) {
        return Err(Error::InvalidArgument {
            op: "feature_clip",
            msg: format!("radius must be positive, got {r}"),
        });
    }
    let ax = x.rank() - 1;
    let norm = x.square().sum(&[ax], true)?.sqrt_clamped();
    let factor = x.tape().scalar(r).div(norm.clamp(Some(r), None))?;
    x.mul(factor)
}

/// Hyperplane normal `w = [sinh(s a) ||z||, cosh(s a) z]`, `s = sqrt(-K)`,
/// for `z: [C, n]`, `a: [C]`.
pub fn hyperplane_normal<'t, T: Real>(m: &Lorentz<T>, z: Var<'t, T>, a: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = m.curvature.sqrt_neg_k();
    let sa = a.mul_scalar(s).reshape(&[a.value().numel(), 1])?;
    let zn = z.square().sum(&[1], true)?.sqrt_clamped();
    Var::concat(&[sa.sinh().mul(zn)?, sa.cosh().mul(z)?], 1)
}

/// MLR logits `(||z_c|| / s) asinh(s alpha_c / ||z_c||)` with
/// `alpha_c = cosh(s a_c) <z_c, x_s> - sinh(s a_c) ||z_c|| x_t`, the signed
/// distance to class hyperplane `c` scaled by `||z_c||`.
///
/// `x: [B, n+1]`, `z: [C, n]`, `a: [C]`; returns `[B, C]`.
pub fn lorentz_mlr<'t, T: Real>(m: &Lorentz<T>, x: Var<'t, T>, z: Var<'t, T>, a: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = m.curvature.sqrt_neg_k();
    let zsq = z.square().sum(&[1], false)?;
    // classes with a vanishing normal score exactly zero
    let live = zsq.value().map(|v| if v < T::lit(1e-18) { T::zero() } else { T::one() });
    let zn = zsq.clamp(Some(T::lit(1e-18)), None).sqrt_clamped();
    let sa = a.mul_scalar(s);
    let dot = m.space(x)?.linear(z, None)?;
    let alpha = sa.cosh().mul(dot)?.sub(sa.sinh().mul(zn)?.mul(m.time(x)?)?)?;
    let arg = alpha.mul_scalar(s).div(zn)?;
    arg.asinh().mul(zn.mul_scalar(T::one() / s))?.mul(x.tape().constant(live))
}

/// `ln(e^y - 1)`, the raw value whose softplus is `y`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 20.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Lorentz fully-connected layer:
/// `y = [sqrt(||psi(W x + b)||^2 - 1/K), psi(W x + b)]` with `W: [m, n+1]`
/// acting on the whole input point.
#[derive(Debug, Clone)]
pub struct LorentzFc<T: Real> {
    name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub manifold: Lorentz<T>,
}

impl<T: Real> LorentzFc<T> {
    /// Maps `L^n` to `L^m`.
    pub fn new<R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        n: usize,
        m: usize,
        activation: Activation,
        manifold: Lorentz<T>,
        rng: &mut R,
    ) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Model(format!("{name}: dimensions must be >= 1, got {n} -> {m}")));
        }
        let weight = store.add(&format!("{name}.weight"), kaiming(rng, &[m, n + 1], n + 1))?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[m]))?;
        Ok(Self {
            name: name.to_string(),
            weight,
            bias,
            in_dim: n,
            out_dim: m,
            activation,
            manifold,
        })
    }
}

impl<T: Real> Layer<T> for LorentzFc<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward<'t>(&self, ctx: &mut Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        if x.last_dim() != self.in_dim + 1 {
            return Err(Error::Shape {
                op: "lorentz_fc",
                lhs: x.shape(),
                rhs: vec![self.out_dim, self.in_dim + 1],
            });
        }
        let y = x.linear(ctx.param(self.weight), Some(ctx.param(self.bias)))?;
        self.manifold.project(self.activation.apply(y))
    }

    fn describe(&self) -> String {
        format!("LorentzFc L^{} -> L^{} ({:?})", self.in_dim, self.out_dim, self.activation)
    }
}

/// Convolution geometry. Channel counts are space dimensions; hyperbolic
/// maps carry one extra time channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    #[serde(default)]
    pub transposed: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            padding,
            transposed: false,
        }
    }

    pub fn transposed(mut self) -> Self {
        self.transposed = true;
        self
    }

    pub fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }

    /// Sliding-window geometry over an `h x w` input. Transposed
    /// convolutions become stride-1 windows over the input interleaved with
    /// `stride - 1` pad entries and padded by `kernel - 1 - padding`.
    pub fn geometry(&self, h: usize, w: usize) -> Result<PatchGeometry> {
        let (kh, kw) = self.kernel;
        if kh == 0 || kw == 0 || self.stride == 0 {
            return Err(Error::Model(format!("invalid conv spec {self:?}")));
        }
        let g = if self.transposed {
            if self.padding + 1 > kh || self.padding + 1 > kw {
                return Err(Error::Model(format!(
                    "transposed conv padding {} must be < kernel {kh}x{kw}",
                    self.padding
                )));
            }
            PatchGeometry {
                in_h: h,
                in_w: w,
                kh,
                kw,
                stride: 1,
                pad_h: kh - 1 - self.padding,
                pad_w: kw - 1 - self.padding,
                dilation: self.stride,
            }
        } else {
            PatchGeometry {
                in_h: h,
                in_w: w,
                kh,
                kw,
                stride: self.stride,
                pad_h: self.padding,
                pad_w: self.padding,
                dilation: 1,
            }
        };
        g.validate()?;
        Ok(g)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let g = self.geometry(h, w)?;
        Ok((g.out_h(), g.out_w()))
    }
}

/// Lorentz convolution: LFC applied to the Lorentz direct concatenation of
/// each receptive field, with origin padding.
#[derive(Debug, Clone)]
pub struct LorentzConv2d<T: Real> {
    name: String,
    pub spec: ConvSpec,
    pub fc: LorentzFc<T>,
}

impl<T: Real> LorentzConv2d<T> {
    pub fn new<R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        manifold: Lorentz<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let fc = LorentzFc::new(
            store,
            name,
            spec.in_channels * spec.taps(),
            spec.out_channels,
            Activation::Identity,
            manifold,
            rng,
        )?;
        Ok(Self {
            name: name.to_string(),
            spec,
            fc,
        })
    }
}

impl<T: Real> Layer<T> for LorentzConv2d<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward<'t>(&self, ctx: &mut Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[3] != self.spec.in_channels + 1 {
            return Err(Error::Shape {
                op: "lorentz_conv2d",
                lhs: shape,
                rhs: vec![0, 0, 0, self.spec.in_channels + 1],
            });
        }
        let m = self.fc.manifold;
        let geom = self.spec.geometry(shape[1], shape[2])?;
        let origin = m.origin_tensor(self.spec.in_channels);
        let patches = gather_patches(x, &geom, &origin)?;
        let y = self.fc.forward(ctx, hcat_rows(&m, patches)?)?;
        y.reshape(&[shape[0], geom.out_h(), geom.out_w(), self.spec.out_channels + 1])
    }

    fn describe(&self) -> String {
        let s = &self.spec;
        format!(
            "LorentzConv{} {}->{} k{}x{} s{} p{}",
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

/// Lorentz batch normalization.
///
/// Train mode: centroid `mu_B` and geodesic Fréchet variance `s2_B` of the
/// batch; each point is log-mapped at `mu_B`, transported to the origin,
/// scaled by `gamma / sqrt(s2_B + eps)`, transported to `beta` and
/// exp-mapped there. Feature maps `[B, H, W, n+1]` use the centroid of the
/// per-instance centroids. Eval mode uses the running statistics.
#[derive(Debug, Clone)]
pub struct LorentzBatchNorm<T: Real> {
    name: String,
    pub dim: usize,
    /// Space part of `beta`.
    pub beta: ParamId,
    /// `gamma = softplus(gamma_raw)`, shape `[1]`.
    pub gamma: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: T,
    pub eps: T,
    pub metric: VarianceMetric,
    pub manifold: Lorentz<T>,
}

impl<T: Real> LorentzBatchNorm<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, n: usize, manifold: Lorentz<T>) -> Result<Self> {
        let beta = store.add(&format!("{name}.beta"), Tensor::zeros(&[n]))?;
        let gamma = store.add(&format!("{name}.gamma"), Tensor::full(&[1], T::lit(softplus_inverse(1.0))))?;
        let running_mean = store.add_buffer(&format!("{name}.running_mean"), manifold.origin_tensor(n))?;
        let running_var = store.add_buffer(&format!("{name}.running_var"), Tensor::ones(&[1]))?;
        Ok(Self {
            name: name.to_string(),
            dim: n,
            beta,
            gamma,
            running_mean,
            running_var,
            momentum: T::lit(0.1),
            eps: T::lit(1e-5),
            metric: VarianceMetric::Geodesic,
            manifold,
        })
    }

    /// Batch centroid and Fréchet variance of `pts: [B, S, n+1]`.
    pub fn batch_stats<'t>(&self, pts: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let m = &self.manifold;
        let s = pts.shape()[1];
        let mu = if s == 1 {
            m.centroid(pts.reshape(&[pts.shape()[0], self.dim + 1])?, 0, None)?
        } else {
            m.centroid(m.centroid(pts, 1, None)?, 0, None)?
        };
        let var = m.frechet_variance(pts, mu, self.metric)?;
        Ok((mu, var))
    }

    /// Running-statistics update from batch statistics.
    fn updated_stats(&self, mean: &Tensor<T>, var: &Tensor<T>, mu: &Tensor<T>, s2: T) -> Result<(Tensor<T>, Tensor<T>)> {
        let eta = self.momentum;
        let tape = Tape::inference();
        let pts = Tensor::concat(&[&mean.reshape(&[1, self.dim + 1])?, &mu.reshape(&[1, self.dim + 1])?], 0)?;
        let w = Tensor::new(&[2, 1], vec![T::one() - eta, eta])?;
        let new_mean = self
            .manifold
            .centroid(tape.constant(pts), 0, Some(tape.constant(w)))?
            .value()
            .as_ref()
            .clone();
        let new_var = var.map(|v| (T::one() - eta) * v + eta * s2);
        Ok((new_mean, new_var))
    }

    /// The normalizing transform given statistics.
    pub fn normalize<'t>(
        &self,
        ctx: &Ctx<'t, T>,
        pts: Var<'t, T>,
        mu: Var<'t, T>,
        var: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let m = &self.manifold;
        let gamma = ctx.param(self.gamma).softplus();
        let scale = gamma.div(var.add_scalar(self.eps).sqrt_clamped())?;
        let v = m.log(mu, pts)?;
        let u = m.transport_to_origin(mu, v)?.mul(scale)?;
        let beta = m.project(ctx.param(self.beta))?;
        let w = m.transport_from_origin(beta, u)?;
        m.exp_unchecked(beta, w)
    }
}

impl<T: Real> Layer<T> for LorentzBatchNorm<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward<'t>(&self, ctx: &mut Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() < 2 || shape[shape.len() - 1] != self.dim + 1 {
            return Err(Error::Shape {
                op: "lorentz_batch_norm",
                lhs: shape,
                rhs: vec![0, self.dim + 1],
            });
        }
        let b = shape[0];
        let spatial: usize = shape[1..shape.len() - 1].iter().product();
        let pts = x.reshape(&[b, spatial, self.dim + 1])?;
        let (mu, var) = if ctx.is_train() {
            if b < 2 {
                return Err(Error::InvalidArgument {
                    op: "lorentz_batch_norm",
                    msg: format!("train mode needs a batch of at least 2, got {b}"),
                });
            }
            let (mu, var) = self.batch_stats(pts)?;
            let (mean, rv) = (ctx.param(self.running_mean).value(), ctx.param(self.running_var).value());
            let (new_mean, new_var) = self.updated_stats(&mean, &rv, &mu.value(), var.value().item())?;
            ctx.push_update(self.running_mean, new_mean);
            ctx.push_update(self.running_var, new_var);
            (mu, var)
        } else {
            (ctx.param(self.running_mean), ctx.param(self.running_var))
        };
        self.normalize(ctx, pts, mu, var)?.reshape(&shape)
    }

    fn describe(&self) -> String {
        format!("LorentzBatchNorm L^{}", self.dim)
    }
}

/// Lorentz multinomial logistic regression head: `[B, n+1] -> [B, C]`.
#[derive(Debug, Clone)]
pub struct LorentzMlr<T: Real> {
    name: String,
    pub dim: usize,
    pub classes: usize,
    pub z: ParamId,
    pub a: ParamId,
    pub manifold: Lorentz<T>,
}

impl<T: Real> LorentzMlr<T> {
    pub fn new<R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        n: usize,
        classes: usize,
        manifold: Lorentz<T>,
        rng: &mut R,
    ) -> Result<Self> {
        if classes < 2 || n == 0 {
            return Err(Error::Model(format!("{name}: need n >= 1 and >= 2 classes")));
        }
        let bound = 1.0 / (n as f64).sqrt();
        let z = store.add(&format!("{name}.z"), uniform(rng, &[classes, n], bound))?;
        let a = store.add(&format!("{name}.a"), Tensor::zeros(&[classes]))?;
        Ok(Self {
            name: name.to_string(),
            dim: n,
            classes,
            z,
            a,
            manifold,
        })
    }
}

impl<T: Real> Layer<T> for LorentzMlr<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward<'t>(&self, ctx: &mut Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        if x.rank() != 2 || x.last_dim() != self.dim + 1 {
            return Err(Error::Shape {
                op: "lorentz_mlr",
                lhs: x.shape(),
                rhs: vec![0, self.dim + 1],
            });
        }
        lorentz_mlr(&self.manifold, x, ctx.param(self.z), ctx.param(self.a))
    }

    fn describe(&self) -> String {
        format!("LorentzMlr L^{} -> {} classes", self.dim, self.classes)
    }
}

/// Lorentz ReLU as a layer.
#[derive(Debug, Clone)]
pub struct LorentzRelu<T: Real> {
    name: String,
    pub manifold: Lorentz<T>,
}

impl<T: Real> LorentzRelu<T> {
    pub fn new(name: &str, manifold: Lorentz<T>) -> Self {
        Self {
            name: name.to_string(),
            manifold,
        }
    }
}

impl<T: Real> Layer<T> for LorentzRelu<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward<'t>(&self, _ctx: &mut Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        lorentz_relu(&self.manifold, x)
    }

    fn describe(&self) -> String {
        "LorentzRelu".into()
    }
}
