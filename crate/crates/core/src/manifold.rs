//! Lorentz-model (hyperboloid) geometry.
//!
//! Points of the n-dimensional model with curvature `K < 0` are vectors
//! `x = [x_t, x_s]` in `R^{n+1}` with `<x, x>_L = 1/K` and `x_t > 0`, where
//! `<x, y>_L = -x_t y_t + x_s . y_s`. The manifold axis is always the last
//! axis; every operation broadcasts over leading axes.
//!
//! [`Lorentz`] holds the differentiable operations on tape [`Var`]s. The
//! typed [`LorentzPoint`] / [`TangentVector`] wrappers validate invariants
//! and evaluate on a private inference tape, for use outside training.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Constant negative sectional curvature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature<T: Real>(T);

impl<T: Real> Curvature<T> {
    pub fn new(k: T) -> Result<Self> {
        if !(k < T::zero()) || !k.is_finite() {
            return Err(Error::Curvature(k.f64()));
        }
        Ok(Self(k))
    }

    pub fn k(&self) -> T {
        self.0
    }

    /// `sqrt(-K)`.
    pub fn sqrt_neg_k(&self) -> T {
        (-self.0).sqrt()
    }

    /// `1 / sqrt(-K)`, the time component of the origin.
    pub fn radius(&self) -> T {
        T::one() / self.sqrt_neg_k()
    }

    pub fn cast<U: Real>(&self) -> Curvature<U> {
        Curvature(U::lit(self.0.f64()))
    }
}

impl<T: Real> Default for Curvature<T> {
    fn default() -> Self {
        Self(-T::one())
    }
}

impl<T: Real> TryFrom<f64> for Curvature<T> {
    type Error = Error;
    fn try_from(k: f64) -> Result<Self> {
        Self::new(T::lit(k))
    }
}

impl<T: Real> From<Curvature<T>> for f64 {
    fn from(c: Curvature<T>) -> f64 {
        c.0.f64()
    }
}

/// Which squared distance a Fréchet variance averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMetric {
    /// Squared geodesic distance `d_L(x, y)^2`.
    #[default]
    Geodesic,
    /// Squared Lorentzian distance `2/K - 2<x, y>_L`.
    Lorentzian,
}

/// Differentiable Lorentz-model operations at a fixed curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorentz<T: Real> {
    pub curvature: Curvature<T>,
}

fn last_axis<T: Real>(x: Var<'_, T>) -> usize {
    x.rank() - 1
}

impl<T: Real> Lorentz<T> {
    pub fn new(curvature: Curvature<T>) -> Self {
        Self { curvature }
    }

    pub fn with_k(k: T) -> Result<Self> {
        Ok(Self::new(Curvature::new(k)?))
    }

    fn k(&self) -> T {
        self.curvature.k()
    }

    fn s(&self) -> T {
        self.curvature.sqrt_neg_k()
    }

    /// The origin `[1/sqrt(-K), 0, ..., 0]` of the n-dimensional model.
    pub fn origin_tensor(&self, n: usize) -> Tensor<T> {
        let mut data = vec![T::zero(); n + 1];
        data[0] = self.curvature.radius();
        Tensor::new(&[n + 1], data).expect("shape")
    }

    pub fn origin<'t>(&self, tape: &'t Tape<T>, n: usize) -> Var<'t, T> {
        tape.constant(self.origin_tensor(n))
    }

    /// `[.., 1]` time components.
    pub fn time<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.narrow(last_axis(x), 0, 1)
    }

    /// `[.., n]` space components.
    pub fn space<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let n = x.last_dim();
        if n < 2 {
            return Err(Error::InvalidArgument {
                op: "space",
                msg: format!("manifold axis of width {n} has no space component"),
            });
        }
        x.narrow(last_axis(x), 1, n - 1)
    }

    /// `<x, y>_L` keeping the reduced axis, shape `[.., 1]`.
    pub fn inner_keep<'t>(&self, x: Var<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        let p = x.mul(y)?;
        let ax = last_axis(p);
        let total = p.sum(&[ax], true)?;
        let time = p.narrow(ax, 0, 1)?;
        total.sub(time.mul_scalar(T::lit(2.0)))
    }

    /// Minkowski inner product `-x_t y_t + x_s . y_s`, shape `[..]`.
    pub fn inner<'t>(&self, x: Var<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        let k = self.inner_keep(x, y)?;
        let mut shape = k.shape();
        shape.pop();
        k.reshape(&shape)
    }

    /// Lifts space components onto the hyperboloid:
    /// `x_t = sqrt(||x_s||^2 - 1/K)`.
    pub fn project<'t>(&self, space: Var<'t, T>) -> Result<Var<'t, T>> {
        let ax = last_axis(space);
        let sq = space.square().sum(&[ax], true)?;
        let time = sq.add_scalar(-T::one() / self.k()).sqrt_clamped();
        Var::concat(&[time, space], ax)
    }

    /// Geodesic distance `acosh(K <x, y>_L) / sqrt(-K)`, shape `[..]`.
    pub fn distance<'t>(&self, x: Var<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = self.inner(x, y)?.mul_scalar(self.k());
        Ok(b.acosh_clamped().mul_scalar(T::one() / self.s()))
    }

    /// `d_L(x, y)^2`, with a derivative that stays finite at `x = y`.
    pub fn geodesic_sq_distance<'t>(&self, x: Var<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = self.inner(x, y)?.mul_scalar(self.k());
        Ok(b.acosh_sq().mul_scalar(-T::one() / self.k()))
    }

    /// Squared Lorentzian distance `2/K - 2<x, y>_L`.
    pub fn sq_distance<'t>(&self, x: Var<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self
            .inner(x, y)?
            .mul_scalar(-T::lit(2.0))
            .add_scalar(T::lit(2.0) / self.k()))
    }

    /// Squared Lorentzian distance to the origin, `(2/K)(1 - sqrt(-K) x_t)`.
    pub fn sq_distance_to_origin<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let t = self.time(x)?;
        let mut shape = t.shape();
        shape.pop();
        let two_over_k = T::lit(2.0) / self.k();
        t.mul_scalar(-self.s() * two_over_k).add_scalar(two_over_k).reshape(&shape)
    }

    fn check_tangent(&self, x: Var<'_, T>, z: Var<'_, T>) -> Result<()> {
        let xv = x.value();
        let zv = z.value();
        let tol = T::TANGENT_TOL;
        let n = zv.last_dim();
        let rows = zv.numel() / n.max(1);
        let xn = xv.last_dim();
        let xrows = xv.numel() / xn.max(1);
        for r in 0..rows {
            let zr = &zv.data()[r * n..(r + 1) * n];
            let xr = &xv.data()[(r % xrows.max(1)) * xn..(r % xrows.max(1) + 1) * xn];
            let ip = -xr[0] * zr[0] + xr[1..].iter().zip(&zr[1..]).map(|(&a, &b)| a * b).sum::<T>();
            let scale = {
                let a: T = xr.iter().map(|&v| v * v).sum::<T>().sqrt();
                let b: T = zr.iter().map(|&v| v * v).sum::<T>().sqrt();
                (a * b).f64().max(1.0)
            };
            if ip.abs().f64() > tol * scale {
                return Err(Error::NotTangent {
                    residual: ip.abs().f64(),
                    tol: tol * scale,
                });
            }
        }
        Ok(())
    }

    /// Lorentzian norm `sqrt(max(<z, z>_L, 0))`, keeping the reduced axis.
    fn tangent_norm_keep<'t>(&self, z: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.inner_keep(z, z)?.sqrt_clamped())
    }

    /// `exp_x(z) = cosh(a) x + sinh(a) z / a` with `a = sqrt(-K) ||z||_L`.
    /// The time component is rederived from the space part, which keeps
    /// 32-bit results on the hyperboloid.
    ///
    /// Rejects `z` that is not tangent at `x`.
    pub fn exp<'t>(&self, x: Var<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tangent(x, z)?;
        self.exp_unchecked(x, z)
    }

    /// [`Lorentz::exp`] without the tangency check, for inputs tangent by
    /// construction.
    pub fn exp_unchecked<'t>(&self, x: Var<'t, T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.tangent_norm_keep(z)?.mul_scalar(self.s());
        let y = a.cosh().mul(x)?.add(a.sinhc().mul(z)?)?;
        self.project(self.space(y)?)
    }

    /// Exponential map at the origin from space components `z`:
    /// `[cosh(a)/sqrt(-K), sinh(a) z / a]` with `a = sqrt(-K) ||z||`, the
    /// time component taken from the space part as in [`Lorentz::exp`].
    pub fn exp0<'t>(&self, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let ax = last_axis(z);
        let a = z.square().sum(&[ax], true)?.sqrt_clamped().mul_scalar(self.s());
        self.project(a.sinhc().mul(z)?)
    }

    /// `log_x(y) = acosh(b) / sqrt(b^2 - 1) (y - b x)` with `b = K <x, y>_L`.
    pub fn log<'t>(&self, x: Var<'t, T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = self.inner_keep(x, y)?.mul_scalar(self.k());
        let diff = y.sub(b.mul(x)?)?;
        b.acosh_ratio().mul(diff)
    }

    /// Space components of `log_0(y)` (its time component is zero).
    pub fn log0<'t>(&self, y: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = self.time(y)?.mul_scalar(self.s());
        b.acosh_ratio().mul(self.space(y)?)
    }

    /// Parallel transport of `v` from `T_x` to `T_y` along the geodesic:
    /// `v + <y, v>_L / (1/(-K) - <x, y>_L) (x + y)`.
    pub fn transport<'t>(&self, x: Var<'t, T>, y: Var<'t, T>, v: Var<'t, T>) -> Result<Var<'t, T>> {
        let num = self.inner_keep(y, v)?;
        let den = self.inner_keep(x, y)?.neg().add_scalar(-T::one() / self.k());
        v.add(num.div(den)?.mul(x.add(y)?)?)
    }

    /// `x + origin` without materializing the origin.
    fn add_origin<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let ax = last_axis(x);
        let t = self.time(x)?.add_scalar(self.curvature.radius());
        Var::concat(&[t, self.space(x)?], ax)
    }

    /// Transport from `T_x` to the origin's tangent space:
    /// `v - sqrt(-K) v_t / (1 + sqrt(-K) x_t) (x + origin)`.
    pub fn transport_to_origin<'t>(&self, x: Var<'t, T>, v: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = self.s();
        let num = self.time(v)?.mul_scalar(-s);
        let den = self.time(x)?.mul_scalar(s).add_scalar(T::one());
        v.add(num.div(den)?.mul(self.add_origin(x)?)?)
    }

    /// Transport from the origin's tangent space to `T_y`:
    /// `v + (-K) <y, v>_L / (1 + sqrt(-K) y_t) (y + origin)`.
    pub fn transport_from_origin<'t>(&self, y: Var<'t, T>, v: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = self.s();
        let num = self.inner_keep(y, v)?.mul_scalar(-self.k());
        let den = self.time(y)?.mul_scalar(s).add_scalar(T::one());
        v.add(num.div(den)?.mul(self.add_origin(y)?)?)
    }

    /// Closed-form weighted centroid over `axis`:
    /// `sum nu_i x_i / (sqrt(-K) | ||sum nu_i x_i||_L |)`.
    ///
    /// `weights`, when given, broadcasts against `x` with the manifold axis
    /// kept (e.g. shape `[m, 1]` for `x: [m, n+1]`). Uniform weights when
    /// `None`.
    pub fn centroid<'t>(&self, x: Var<'t, T>, axis: usize, weights: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        if axis >= last_axis(x) {
            return Err(Error::InvalidAxis {
                op: "centroid",
                axis,
                rank: x.rank(),
            });
        }
        let sum = match weights {
            Some(w) => {
                let wv = w.value();
                if wv.data().iter().any(|&v| v < T::zero()) {
                    return Err(Error::InvalidArgument {
                        op: "centroid",
                        msg: "weights must be non-negative".into(),
                    });
                }
                if wv.sum_all() <= T::zero() {
                    return Err(Error::InvalidArgument {
                        op: "centroid",
                        msg: "weights sum to zero".into(),
                    });
                }
                x.mul(w)?.sum(&[axis], false)?
            }
            None => x.mean(&[axis], false)?,
        };
        let norm = self.inner_keep(sum, sum)?.neg().sqrt_clamped().mul_scalar(self.s());
        sum.div(norm)
    }

    /// Mean squared distance of `x: [m, n+1]` (any leading axes are all
    /// averaged) to `mu`.
    pub fn frechet_variance<'t>(&self, x: Var<'t, T>, mu: Var<'t, T>, metric: VarianceMetric) -> Result<Var<'t, T>> {
        if x.value().numel() == 0 {
            return Err(Error::EmptyBatch("frechet_variance: empty batch"));
        }
        let d2 = match metric {
            VarianceMetric::Geodesic => self.geodesic_sq_distance(x, mu)?,
            VarianceMetric::Lorentzian => self.sq_distance(x, mu)?,
        };
        let n = d2.value().numel();
        Ok(d2.sum_all().mul_scalar(T::one() / T::lit(n as f64)))
    }

    /// Poincaré-ball coordinates `R x_s / (x_t + R)` with `R = 1/sqrt(-K)`,
    /// landing in the open ball of radius `R`. At `K = -1` this is
    /// `x_s / (x_t + 1)`.
    pub fn to_poincare<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let r = self.curvature.radius();
        let den = self.time(x)?.add_scalar(r);
        self.space(x)?.mul_scalar(r).div(den)
    }

    /// Largest relative residual `|<x, x>_L - 1/K| / |1/K|` over all rows.
    pub fn manifold_residual(&self, x: &Tensor<T>) -> f64 {
        let n = x.last_dim();
        let inv_k = (T::one() / self.k()).f64();
        x.data()
            .chunks(n)
            .map(|r| {
                let ip = -r[0].f64() * r[0].f64() + r[1..].iter().map(|v| v.f64() * v.f64()).sum::<f64>();
                (ip - inv_k).abs() / inv_k.abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest residual relative to the point's own scale,
    /// `|<x, x>_L - 1/K| / max(|1/K|, x_t^2)`. This is the quantity finite
    /// precision can bound: storing `x_t` alone perturbs `<x, x>_L` by about
    /// `2 eps x_t^2`.
    pub fn scaled_residual(&self, x: &Tensor<T>) -> f64 {
        let n = x.last_dim();
        let inv_k = (T::one() / self.k()).f64();
        x.data()
            .chunks(n)
            .map(|r| {
                let t = r[0].f64();
                let ip = -t * t + r[1..].iter().map(|v| v.f64() * v.f64()).sum::<f64>();
                (ip - inv_k).abs() / inv_k.abs().max(t * t)
            })
            .fold(0.0, f64::max)
    }

    /// Checks the on-manifold invariants of every row: relative residual
    /// within `tol` and positive time component.
    pub fn check_point(&self, x: &Tensor<T>, tol: f64) -> Result<()> {
        let residual = self.manifold_residual(x);
        let n = x.last_dim();
        let time_ok = x.data().chunks(n).all(|r| r[0] > T::zero());
        if residual > tol || !time_ok || residual.is_nan() {
            return Err(Error::NotOnManifold {
                residual: if time_ok { residual } else { f64::INFINITY },
                tol,
            });
        }
        Ok(())
    }
}

/// Lorentz rotation `[[1, 0], [0, R]]` for a special-orthogonal `R: [n, n]`.
pub fn lorentz_rotation<T: Real>(r: &Tensor<T>) -> Result<Tensor<T>> {
    if r.rank() != 2 || r.shape()[0] != r.shape()[1] {
        return Err(Error::InvalidArgument {
            op: "lorentz_rotation",
            msg: format!("expected a square matrix, got {:?}", r.shape()),
        });
    }
    let n = r.shape()[0];
    let tol = T::TANGENT_TOL;
    let rtr = r.transpose_last2()?.matmul(r)?;
    for i in 0..n {
        for j in 0..n {
            let expect = if i == j { 1.0 } else { 0.0 };
            if (rtr.data()[i * n + j].f64() - expect).abs() > tol {
                return Err(Error::InvalidArgument {
                    op: "lorentz_rotation",
                    msg: "matrix is not orthogonal".into(),
                });
            }
        }
    }
    let det = determinant(&r.to_f64_vec(), n);
    if (det - 1.0).abs() > tol {
        return Err(Error::InvalidArgument {
            op: "lorentz_rotation",
            msg: format!("determinant {det} is not 1"),
        });
    }
    let mut out = Tensor::zeros(&[n + 1, n + 1]);
    out.data_mut()[0] = T::one();
    for i in 0..n {
        for j in 0..n {
            out.data_mut()[(i + 1) * (n + 1) + j + 1] = r.data()[i * n + j];
        }
    }
    Ok(out)
}

/// Lorentz boost with velocity `v`, `||v|| < 1`:
/// `[[g, -g v^T], [-g v, I + g^2/(1+g) v v^T]]`, `g = 1/sqrt(1 - ||v||^2)`.
pub fn lorentz_boost<T: Real>(v: &Tensor<T>) -> Result<Tensor<T>> {
    if v.rank() != 1 {
        return Err(Error::InvalidArgument {
            op: "lorentz_boost",
            msg: format!("expected a vector, got {:?}", v.shape()),
        });
    }
    let n = v.numel();
    let v2: T = v.data().iter().map(|&a| a * a).sum();
    if v2 >= T::one() {
        return Err(Error::InvalidArgument {
            op: "lorentz_boost",
            msg: format!("velocity norm {} must be < 1", v2.sqrt()),
        });
    }
    let g = T::one() / (T::one() - v2).sqrt();
    let c = g * g / (T::one() + g);
    let w = n + 1;
    let mut out = Tensor::zeros(&[w, w]);
    let d = out.data_mut();
    d[0] = g;
    for i in 0..n {
        d[i + 1] = -g * v.data()[i];
        d[(i + 1) * w] = -g * v.data()[i];
        for j in 0..n {
            let id = if i == j { T::one() } else { T::zero() };
            d[(i + 1) * w + j + 1] = id + c * v.data()[i] * v.data()[j];
        }
    }
    Ok(out)
}

/// Applies a Lorentz transformation to every row of `x`: `x A^T`.
pub fn apply_transform<T: Real>(a: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    x.matmul(&a.transpose_last2()?)
}

fn determinant(m: &[f64], n: usize) -> f64 {
    let mut a = m.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            det = -det;
        }
        let p = a[col * n + col];
        det *= p;
        for row in col + 1..n {
            let f = a[row * n + col] / p;
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
        }
    }
    det
}

/// A batch of points on the hyperboloid, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint<T: Real> {
    values: Tensor<T>,
    curvature: Curvature<T>,
}

/// Where a [`TangentVector`] is attached.
#[derive(Debug, Clone, PartialEq)]
pub enum TangentBase<T: Real> {
    Origin,
    Point(LorentzPoint<T>),
}

/// A batch of tangent vectors, validated against their base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector<T: Real> {
    values: Tensor<T>,
    base: TangentBase<T>,
}

fn eval<T: Real, R>(f: impl for<'t> FnOnce(&'t Tape<T>) -> Result<R>) -> Result<R> {
    let tape = Tape::inference();
    f(&tape)
}

impl<T: Real> LorentzPoint<T> {
    pub fn new(values: Tensor<T>, curvature: Curvature<T>) -> Result<Self> {
        if values.rank() == 0 || values.last_dim() < 2 {
            return Err(Error::InvalidArgument {
                op: "LorentzPoint",
                msg: format!("need a manifold axis of width >= 2, got {:?}", values.shape()),
            });
        }
        Lorentz::new(curvature).check_point(&values, T::MANIFOLD_TOL)?;
        Ok(Self { values, curvature })
    }

    pub fn origin(n: usize, curvature: Curvature<T>) -> Self {
        let values = Lorentz::new(curvature).origin_tensor(n).reshape(&[1, n + 1]).expect("shape");
        Self { values, curvature }
    }

    /// Recomputes time components from space components.
    pub fn from_space(space: &Tensor<T>, curvature: Curvature<T>) -> Result<Self> {
        let m = Lorentz::new(curvature);
        let values = eval(|tape| Ok(m.project(tape.constant(space.clone()))?.value().as_ref().clone()))?;
        Ok(Self { values, curvature })
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<T> {
        self.values
    }

    pub fn curvature(&self) -> Curvature<T> {
        self.curvature
    }

    /// Manifold dimension `n` (the last axis has width `n + 1`).
    pub fn dim(&self) -> usize {
        self.values.last_dim() - 1
    }

    pub fn manifold(&self) -> Lorentz<T> {
        Lorentz::new(self.curvature)
    }

    fn same_curvature(&self, other: &Self) -> Result<()> {
        if self.curvature != other.curvature {
            return Err(Error::CurvatureMismatch(self.curvature.k().f64(), other.curvature.k().f64()));
        }
        if self.dim() != other.dim() {
            return Err(Error::Shape {
                op: "lorentz",
                lhs: self.values.shape().to_vec(),
                rhs: other.values.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn distance(&self, other: &Self) -> Result<Tensor<T>> {
        self.same_curvature(other)?;
        let m = self.manifold();
        eval(|tape| {
            let d = m.distance(tape.constant(self.values.clone()), tape.constant(other.values.clone()))?;
            Ok(d.value().as_ref().clone())
        })
    }

    pub fn log(&self, other: &Self) -> Result<TangentVector<T>> {
        self.same_curvature(other)?;
        let m = self.manifold();
        let values = eval(|tape| {
            let v = m.log(tape.constant(self.values.clone()), tape.constant(other.values.clone()))?;
            Ok(v.value().as_ref().clone())
        })?;
        Ok(TangentVector {
            values,
            base: TangentBase::Point(self.clone()),
        })
    }

    pub fn exp(&self, v: &TangentVector<T>) -> Result<Self> {
        let m = self.manifold();
        let values = eval(|tape| {
            let y = m.exp(tape.constant(self.values.clone()), tape.constant(v.values.clone()))?;
            Ok(y.value().as_ref().clone())
        })?;
        Self::new(values, self.curvature)
    }

    /// Transports `v` (attached here) to `target`.
    pub fn transport(&self, target: &Self, v: &TangentVector<T>) -> Result<TangentVector<T>> {
        self.same_curvature(target)?;
        let m = self.manifold();
        let values = eval(|tape| {
            let x = tape.constant(self.values.clone());
            let y = tape.constant(target.values.clone());
            Ok(m.transport(x, y, tape.constant(v.values.clone()))?.value().as_ref().clone())
        })?;
        Ok(TangentVector {
            values,
            base: TangentBase::Point(target.clone()),
        })
    }

    /// Weighted centroid of the rows of a `[m, n+1]` batch.
    pub fn centroid(&self, weights: Option<&Tensor<T>>) -> Result<Self> {
        let m = self.manifold();
        let values = eval(|tape| {
            let x = tape.constant(self.values.clone());
            let w = match weights {
                Some(w) => Some(tape.constant(w.reshape(&[w.numel(), 1])?)),
                None => None,
            };
            let lead = self.values.numel() / self.values.last_dim();
            let x = x.reshape(&[lead, self.dim() + 1])?;
            Ok(m.centroid(x, 0, w)?.value().as_ref().clone())
        })?;
        Self::new(values.reshape(&[1, self.dim() + 1])?, self.curvature)
    }

    pub fn to_poincare(&self) -> Result<Tensor<T>> {
        let m = self.manifold();
        eval(|tape| Ok(m.to_poincare(tape.constant(self.values.clone()))?.value().as_ref().clone()))
    }
}

impl<T: Real> TangentVector<T> {
    pub fn new(values: Tensor<T>, base: TangentBase<T>) -> Result<Self> {
        match &base {
            TangentBase::Origin => {
                if values.data().chunks(values.last_dim()).any(|r| r[0].abs().f64() > T::TANGENT_TOL) {
                    return Err(Error::NotTangent {
                        residual: f64::NAN,
                        tol: T::TANGENT_TOL,
                    });
                }
            }
            TangentBase::Point(p) => {
                eval(|tape| p.manifold().check_tangent(tape.constant(p.values.clone()), tape.constant(values.clone())))?;
            }
        }
        Ok(Self { values, base })
    }

    /// A tangent vector at the origin from its space components.
    pub fn at_origin(space: &Tensor<T>) -> Result<Self> {
        let rows = space.numel() / space.last_dim();
        let lead: Vec<usize> = space.shape()[..space.rank() - 1].to_vec();
        let zeros = Tensor::zeros(&[rows, 1]);
        let sp = space.reshape(&[rows, space.last_dim()])?;
        let mut shape = lead;
        shape.push(space.last_dim() + 1);
        let values = Tensor::concat(&[&zeros, &sp], 1)?.reshape(&shape)?;
        Ok(Self {
            values,
            base: TangentBase::Origin,
        })
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn base(&self) -> &TangentBase<T> {
        &self.base
    }

    /// `sqrt(<v, v>_L)` per row.
    pub fn norm(&self) -> Vec<T> {
        self.values
            .data()
            .chunks(self.values.last_dim())
            .map(|r| (-r[0] * r[0] + r[1..].iter().map(|&v| v * v).sum::<T>()).max(T::zero()).sqrt())
            .collect()
    }
}
