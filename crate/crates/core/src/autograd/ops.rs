use std::rc::Rc;

use super::Var;
use crate::error::{Error, Result};
use crate::real::{acosh_ratio, acosh_ratio_grad, sinhc, sinhc_grad, Real};
use crate::tensor::Tensor;

/// Elementwise unary kinds with closed-form derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Exp,
    Ln,
    Cosh,
    Sinh,
    Tanh,
    Asinh,
    Square,
    Softplus,
    /// `sinh(x) / x`, series near zero.
    Sinhc,
    /// `acosh(x) / sqrt(x^2 - 1)`, series near one.
    AcoshRatio,
    /// `acosh(x)^2`, whose derivative stays finite at `x = 1`.
    AcoshSq,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Cosh => "cosh",
            Unary::Sinh => "sinh",
            Unary::Tanh => "tanh",
            Unary::Asinh => "asinh",
            Unary::Square => "square",
            Unary::Softplus => "softplus",
            Unary::Sinhc => "sinhc",
            Unary::AcoshRatio => "acosh_ratio",
            Unary::AcoshSq => "acosh_sq",
        }
    }

    pub fn eval<T: Real>(self, x: T) -> T {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Cosh => x.cosh(),
            Unary::Sinh => x.sinh(),
            Unary::Tanh => x.tanh(),
            Unary::Asinh => x.asinh(),
            Unary::Square => x * x,
            Unary::Softplus => x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            Unary::Sinhc => sinhc(x),
            Unary::AcoshRatio => acosh_ratio(x),
            Unary::AcoshSq => {
                let a = x.max(T::one()).acosh();
                a * a
            }
        }
    }

    /// Derivative at `x` given the forward output `y`.
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Unary::Neg => -T::one(),
            Unary::Exp => y,
            Unary::Ln => T::one() / x,
            Unary::Cosh => x.sinh(),
            Unary::Sinh => x.cosh(),
            Unary::Tanh => T::one() - y * y,
            Unary::Asinh => T::one() / (x * x + T::one()).sqrt(),
            Unary::Square => x + x,
            Unary::Softplus => T::one() / (T::one() + (-x).exp()),
            Unary::Sinhc => sinhc_grad(x),
            Unary::AcoshRatio => acosh_ratio_grad(x),
            Unary::AcoshSq => T::lit(2.0) * acosh_ratio(x),
        }
    }
}

fn grad_map<T: Real>(g: &Tensor<T>, x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    let data = g.data().iter().zip(x.data()).map(|(&g, &x)| g * f(x)).collect();
    Tensor::new(g.shape(), data).expect("same shape")
}

impl<'t, T: Real> Var<'t, T> {
    pub fn unary(self, kind: Unary) -> Var<'t, T> {
        let x = self.value();
        let y = x.map(|v| kind.eval(v));
        self.tape.push_op(kind.name(), &[self], y, move |g, p, y| {
            let data = g
                .data()
                .iter()
                .zip(p[0].data())
                .zip(y.data())
                .map(|((&g, &x), &y)| g * kind.derivative(x, y))
                .collect();
            vec![Some(Tensor::new(g.shape(), data).expect("same shape"))]
        })
    }

    pub fn neg(self) -> Self {
        self.unary(Unary::Neg)
    }
    pub fn exp(self) -> Self {
        self.unary(Unary::Exp)
    }
    pub fn ln(self) -> Self {
        self.unary(Unary::Ln)
    }
    pub fn cosh(self) -> Self {
        self.unary(Unary::Cosh)
    }
    pub fn sinh(self) -> Self {
        self.unary(Unary::Sinh)
    }
    pub fn tanh(self) -> Self {
        self.unary(Unary::Tanh)
    }
    pub fn asinh(self) -> Self {
        self.unary(Unary::Asinh)
    }
    pub fn square(self) -> Self {
        self.unary(Unary::Square)
    }
    pub fn softplus(self) -> Self {
        self.unary(Unary::Softplus)
    }
    pub fn sinhc(self) -> Self {
        self.unary(Unary::Sinhc)
    }
    pub fn acosh_ratio(self) -> Self {
        self.unary(Unary::AcoshRatio)
    }
    pub fn acosh_sq(self) -> Self {
        self.unary(Unary::AcoshSq)
    }

    fn check_lower_bound(&self, op: &'static str, bound: T) -> Result<()> {
        let guard = self.tape.guard_eps();
        if let Some(&bad) = self.value().data().iter().find(|&&v| v < bound - guard || v.is_nan()) {
            return Err(Error::Domain {
                op,
                value: bad.f64(),
                guard: guard.f64(),
            });
        }
        Ok(())
    }

    /// `sqrt` with a domain check: values below `-guard_eps` are an error,
    /// values in `[-guard_eps, 0)` are clamped to zero.
    pub fn sqrt(self) -> Result<Self> {
        self.check_lower_bound("sqrt", T::zero())?;
        Ok(self.sqrt_clamped())
    }

    /// `sqrt(max(x, 0))`; the derivative is evaluated at `max(x, guard_eps)`.
    pub fn sqrt_clamped(self) -> Self {
        let x = self.value();
        self.tape.note_kinks(x.data().iter().map(|&v| if v < T::zero() { -1 } else { 0 }));
        let y = x.map(|v| v.max(T::zero()).sqrt());
        let eps = self.tape.guard_eps();
        self.tape.push_op("sqrt", &[self], y, move |g, p, _| {
            vec![Some(grad_map(g, p[0], |x| {
                if x < T::zero() {
                    T::zero()
                } else {
                    T::lit(0.5) / x.max(eps).sqrt()
                }
            }))]
        })
    }

    /// `acosh` with a domain check against `1 - guard_eps`.
    pub fn acosh(self) -> Result<Self> {
        self.check_lower_bound("acosh", T::one())?;
        Ok(self.acosh_clamped())
    }

    /// `acosh(max(x, 1))`; the derivative is evaluated at `max(x, 1 + guard_eps)`.
    pub fn acosh_clamped(self) -> Self {
        let x = self.value();
        self.tape.note_kinks(x.data().iter().map(|&v| if v < T::one() { -1 } else { 0 }));
        let y = x.map(|v| v.max(T::one()).acosh());
        let eps = self.tape.guard_eps();
        self.tape.push_op("acosh", &[self], y, move |g, p, _| {
            vec![Some(grad_map(g, p[0], |x| {
                if x < T::one() {
                    T::zero()
                } else {
                    let x = x.max(T::one() + eps);
                    T::one() / (x * x - T::one()).sqrt()
                }
            }))]
        })
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the kept interval.
    pub fn clamp(self, lo: Option<T>, hi: Option<T>) -> Self {
        let lo_v = lo.unwrap_or(T::neg_infinity());
        let hi_v = hi.unwrap_or(T::infinity());
        let x = self.value();
        self.tape.note_kinks(x.data().iter().map(|&v| {
            if v < lo_v {
                -1
            } else if v > hi_v {
                1
            } else {
                0
            }
        }));
        let y = x.map(|v| v.max(lo_v).min(hi_v));
        self.tape.push_op("clamp", &[self], y, move |g, p, _| {
            vec![Some(grad_map(g, p[0], |x| {
                if x < lo_v || x > hi_v {
                    T::zero()
                } else {
                    T::one()
                }
            }))]
        })
    }

    pub fn relu(self) -> Self {
        let x = self.value();
        self.tape.note_kinks(x.data().iter().map(|&v| if v > T::zero() { 0 } else { -1 }));
        let y = x.map(|v| v.max(T::zero()));
        self.tape.push_op("relu", &[self], y, move |g, p, _| {
            vec![Some(grad_map(g, p[0], |x| if x > T::zero() { T::one() } else { T::zero() }))]
        })
    }

    pub fn add_scalar(self, c: T) -> Self {
        let y = self.value().map(|v| v + c);
        self.tape.push_op("add_scalar", &[self], y, |g, _, _| vec![Some(g.clone())])
    }

    pub fn mul_scalar(self, c: T) -> Self {
        let y = self.value().map(|v| v * c);
        self.tape.push_op("mul_scalar", &[self], y, move |g, _, _| vec![Some(g.scale(c))])
    }

    fn binary(
        self,
        other: Var<'t, T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        da: impl Fn(T, T, T) -> T + 'static,
        db: impl Fn(T, T, T) -> T + 'static,
    ) -> Result<Self> {
        let a = self.value();
        let b = other.value();
        let y = a.zip_map(&b, op, f)?;
        Ok(self.tape.push_op(op, &[self, other], y, move |g, p, y| {
            let (a, b) = (p[0], p[1]);
            let shape = y.shape();
            let a_full = a.broadcast_to(shape).expect("broadcast");
            let b_full = b.broadcast_to(shape).expect("broadcast");
            let mut ga = Vec::with_capacity(g.numel());
            let mut gb = Vec::with_capacity(g.numel());
            for (((&g, &x), &z), &y) in g.data().iter().zip(a_full.data()).zip(b_full.data()).zip(y.data()) {
                ga.push(g * da(x, z, y));
                gb.push(g * db(x, z, y));
            }
            let ga = Tensor::new(shape, ga).expect("shape").sum_to_shape(a.shape()).expect("reduce");
            let gb = Tensor::new(shape, gb).expect("shape").sum_to_shape(b.shape()).expect("reduce");
            vec![Some(ga), Some(gb)]
        }))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Self> {
        let y = self.value().add(&other.value())?;
        Ok(self.tape.push_op("add", &[self, other], y, |g, p, _| {
            vec![
                Some(g.sum_to_shape(p[0].shape()).expect("reduce")),
                Some(g.sum_to_shape(p[1].shape()).expect("reduce")),
            ]
        }))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Self> {
        let y = self.value().sub(&other.value())?;
        Ok(self.tape.push_op("sub", &[self, other], y, |g, p, _| {
            vec![
                Some(g.sum_to_shape(p[0].shape()).expect("reduce")),
                Some(g.scale(-T::one()).sum_to_shape(p[1].shape()).expect("reduce")),
            ]
        }))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Self> {
        self.binary(other, "mul", |a, b| a * b, |_, b, _| b, |a, _, _| a)
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Self> {
        self.binary(other, "div", |a, b| a / b, |_, b, _| T::one() / b, |_, b, y| -y / b)
    }

    /// Elementwise maximum; ties send the gradient to `self`.
    pub fn maximum(self, other: Var<'t, T>) -> Result<Self> {
        self.binary(
            other,
            "maximum",
            T::max,
            |a, b, _| if a >= b { T::one() } else { T::zero() },
            |a, b, _| if a >= b { T::zero() } else { T::one() },
        )
    }

    pub fn sum(self, axes: &[usize], keepdim: bool) -> Result<Self> {
        let x = self.value();
        let y = x.sum_axes(axes, keepdim)?;
        let kept = x.sum_axes(axes, true)?.shape().to_vec();
        Ok(self.tape.push_op("sum", &[self], y, move |g, p, _| {
            let g = g.reshape(&kept).expect("reshape");
            vec![Some(g.broadcast_to(p[0].shape()).expect("broadcast"))]
        }))
    }

    pub fn mean(self, axes: &[usize], keepdim: bool) -> Result<Self> {
        let shape = self.shape();
        let count: usize = axes.iter().filter_map(|&a| shape.get(a)).product();
        Ok(self.sum(axes, keepdim)?.mul_scalar(T::one() / T::lit(count.max(1) as f64)))
    }

    /// Max over `axes`; the gradient goes to every entry equal to the max.
    pub fn max(self, axes: &[usize], keepdim: bool) -> Result<Self> {
        let x = self.value();
        let y = x.max_axes(axes, keepdim)?;
        let kept = x.max_axes(axes, true)?;
        Ok(self.tape.push_op("max", &[self], y, move |g, p, _| {
            let x = p[0];
            let m = kept.broadcast_to(x.shape()).expect("broadcast");
            let g = g.reshape(kept.shape()).expect("reshape").broadcast_to(x.shape()).expect("broadcast");
            let data = x
                .data()
                .iter()
                .zip(m.data())
                .zip(g.data())
                .map(|((&x, &m), &g)| if x == m { g } else { T::zero() })
                .collect();
            vec![Some(Tensor::new(x.shape(), data).expect("shape"))]
        }))
    }

    /// Sum of every element, as a rank-0 value.
    pub fn sum_all(self) -> Self {
        let x = self.value();
        let y = Tensor::scalar(x.sum_all());
        self.tape.push_op("sum_all", &[self], y, |g, p, _| {
            vec![Some(Tensor::full(p[0].shape(), g.item()))]
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let y = self.value().reshape(shape)?;
        Ok(self.tape.push_op("reshape", &[self], y, |g, p, _| {
            vec![Some(g.reshape(p[0].shape()).expect("reshape"))]
        }))
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Self> {
        let y = self.value().broadcast_to(shape)?;
        Ok(self.tape.push_op("broadcast_to", &[self], y, |g, p, _| {
            vec![Some(g.sum_to_shape(p[0].shape()).expect("reduce"))]
        }))
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let x = self.value();
        let y = x.narrow(axis, start, len)?;
        let full = x.shape()[axis];
        Ok(self.tape.push_op("narrow", &[self], y, move |g, _, _| {
            let idx: Vec<usize> = (start..start + len).collect();
            vec![Some(g.index_add(axis, &idx, full).expect("scatter"))]
        }))
    }

    pub fn index_select(self, axis: usize, indices: &[usize]) -> Result<Self> {
        let x = self.value();
        let y = x.index_select(axis, indices)?;
        let full = x.shape()[axis];
        let idx: Rc<[usize]> = indices.into();
        Ok(self.tape.push_op("index_select", &[self], y, move |g, _, _| {
            vec![Some(g.index_add(axis, &idx, full).expect("scatter"))]
        }))
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or(Error::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let vals: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = vals.iter().map(|v| v.as_ref()).collect();
        let y = Tensor::concat(&refs, axis)?;
        let sizes: Vec<usize> = vals.iter().map(|v| v.shape()[axis]).collect();
        Ok(first.tape.push_op("concat", parts, y, move |g, _, _| {
            let mut start = 0;
            sizes
                .iter()
                .map(|&len| {
                    let part = g.narrow(axis, start, len).expect("narrow");
                    start += len;
                    Some(part)
                })
                .collect()
        }))
    }

    pub fn transpose_last2(self) -> Result<Self> {
        let y = self.value().transpose_last2()?;
        Ok(self.tape.push_op("transpose", &[self], y, |g, _, _| {
            vec![Some(g.transpose_last2().expect("transpose"))]
        }))
    }

    /// Batched matrix product; `dA = dY B^T`, `dB = A^T dY`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Self> {
        let y = self.value().matmul(&other.value())?;
        Ok(self.tape.push_op("matmul", &[self, other], y, |g, p, _| {
            let (a, b) = (p[0], p[1]);
            let ga = g.matmul(&b.transpose_last2().expect("t")).expect("matmul");
            let gb = a.transpose_last2().expect("t").matmul(g).expect("matmul");
            vec![
                Some(ga.sum_to_shape(a.shape()).expect("reduce")),
                Some(gb.sum_to_shape(b.shape()).expect("reduce")),
            ]
        }))
    }

    /// `x W^T + b` over the last axis of `x`, with `W: [out, in]`, `b: [out]`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Self> {
        let x = self.value();
        let w = weight.value();
        let err = || Error::Shape {
            op: "linear",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        };
        if w.rank() != 2 || x.rank() == 0 || x.last_dim() != w.shape()[1] {
            return Err(err());
        }
        let (out, inp) = (w.shape()[0], w.shape()[1]);
        let rows = x.numel() / inp.max(1);
        let mut y = vec![T::zero(); rows * out];
        let wt = w.transpose_last2()?;
        crate::tensor::gemm(x.data(), wt.data(), &mut y, rows, inp, out);
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            let bv = b.value();
            if bv.shape() != [out] {
                return Err(Error::Shape {
                    op: "linear bias",
                    lhs: vec![out],
                    rhs: bv.shape().to_vec(),
                });
            }
            for row in y.chunks_mut(out) {
                for (v, &bb) in row.iter_mut().zip(bv.data()) {
                    *v += bb;
                }
            }
            parents.push(b);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = out;
        let y = Tensor::new(&shape, y)?;
        let has_bias = bias.is_some();
        Ok(self.tape.push_op("linear", &parents, y, move |g, p, _| {
            let (x, w) = (p[0], p[1]);
            let mut gx = vec![T::zero(); rows * inp];
            crate::tensor::gemm(g.data(), w.data(), &mut gx, rows, out, inp);
            // dW = g^T x
            let g2 = g.reshape(&[rows, out]).expect("reshape");
            let x2 = x.reshape(&[rows, inp]).expect("reshape");
            let gw = g2.transpose_last2().expect("t").matmul(&x2).expect("matmul");
            let mut grads = vec![Some(Tensor::new(x.shape(), gx).expect("shape")), Some(gw)];
            if has_bias {
                grads.push(Some(g2.sum_axes(&[0], false).expect("sum")));
            }
            grads
        }))
    }

    /// `-sum_b log softmax(logits_b)[label_b] / B` for `[B, C]` logits.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Self> {
        let x = self.value();
        if x.rank() != 2 || x.shape()[0] != labels.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: x.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (b, c) = (x.shape()[0], x.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::OutOfRange {
                op: "cross_entropy label",
                index: bad,
                len: c,
            });
        }
        let mut probs = Vec::with_capacity(b * c);
        let mut loss = T::zero();
        for (row, &label) in x.data().chunks(c).zip(labels) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + z.ln();
            loss += lse - row[label];
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        let scale = T::one() / T::lit(b as f64);
        let labels = labels.to_vec();
        let y = Tensor::scalar(loss * scale);
        Ok(self.tape.push_op("cross_entropy", &[self], y, move |g, _, _| {
            let mut d = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                d[i * c + l] -= T::one();
            }
            let s = g.item() * scale;
            vec![Some(Tensor::new(&[b, c], d.into_iter().map(|v| v * s).collect()).expect("shape"))]
        }))
    }
}
