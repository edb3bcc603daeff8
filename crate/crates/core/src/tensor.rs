//! Dense row-major arrays.
//!
//! [`Tensor`] is plain data: a shape and a contiguous buffer. All operations
//! here are pure and allocate their result; gradient bookkeeping lives in
//! [`crate::autograd`]. Binary operations broadcast under the usual
//! trailing-axis rules.

use std::fmt;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 16;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.6}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ... ({} total)", self.data.len())?;
        }
        write!(f, "]")
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Broadcast shape of two operands under trailing-axis rules.
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Shape {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` with broadcast axes given stride 0.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Walks `out_shape` in row-major order, yielding the source offset for each
/// element of a tensor broadcast with `src_strides`.
struct BroadcastWalk<'a> {
    shape: &'a [usize],
    strides: Vec<usize>,
    index: Vec<usize>,
    offset: usize,
    remaining: usize,
}

impl<'a> BroadcastWalk<'a> {
    fn new(shape: &'a [usize], strides: Vec<usize>) -> Self {
        Self {
            shape,
            index: vec![0; shape.len()],
            strides,
            offset: 0,
            remaining: numel(shape),
        }
    }
}

impl Iterator for BroadcastWalk<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let current = self.offset;
        for ax in (0..self.shape.len()).rev() {
            self.index[ax] += 1;
            self.offset += self.strides[ax];
            if self.index[ax] < self.shape[ax] {
                break;
            }
            self.offset -= self.strides[ax] * self.index[ax];
            self.index[ax] = 0;
        }
        Some(current)
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::InvalidArgument {
                op: "tensor",
                msg: format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// A rank-0 tensor.
    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::lit(v)).collect())
    }

    /// Builds a tensor from a function of the flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Length of the last axis.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise binary operation with broadcasting.
    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Self {
                shape: self.shape.clone(),
                data,
            });
        }
        let shape = broadcast_shapes(op, &self.shape, &other.shape)?;
        if other.data.len() == 1 {
            let b = other.data[0];
            let base = self.broadcast_to(&shape)?;
            return Ok(base.map(|a| f(a, b)));
        }
        if self.data.len() == 1 {
            let a = self.data[0];
            let base = other.broadcast_to(&shape)?;
            return Ok(base.map(|b| f(a, b)));
        }
        let sa = broadcast_strides(&self.shape, &shape);
        let sb = broadcast_strides(&other.shape, &shape);
        let data = BroadcastWalk::new(&shape, sa)
            .zip(BroadcastWalk::new(&shape, sb))
            .map(|(ia, ib)| f(self.data[ia], other.data[ib]))
            .collect();
        Ok(Self { shape, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "div", |a, b| a / b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// Accumulates `other` (same shape) into `self`.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        let target = broadcast_shapes("broadcast_to", &self.shape, shape)?;
        if target != shape {
            return Err(Error::Shape {
                op: "broadcast_to",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        if self.shape == shape {
            return Ok(self.clone());
        }
        let st = broadcast_strides(&self.shape, shape);
        let data = BroadcastWalk::new(shape, st).map(|i| self.data[i]).collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Sums a broadcast result back down to `shape` (the adjoint of
    /// [`Tensor::broadcast_to`]).
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let check = broadcast_shapes("sum_to_shape", shape, &self.shape)?;
        if check != self.shape {
            return Err(Error::Shape {
                op: "sum_to_shape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let st = broadcast_strides(shape, &self.shape);
        let mut out = vec![T::zero(); numel(shape)];
        for (v, i) in self.data.iter().zip(BroadcastWalk::new(&self.shape, st)) {
            out[i] += *v;
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: out,
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    fn check_axes(&self, op: &'static str, axes: &[usize]) -> Result<()> {
        for &axis in axes {
            if axis >= self.rank() {
                return Err(Error::InvalidAxis {
                    op,
                    axis,
                    rank: self.rank(),
                });
            }
        }
        Ok(())
    }

    fn reduced_shape(&self, axes: &[usize], keepdim: bool) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.rank());
        for (i, &d) in self.shape.iter().enumerate() {
            if axes.contains(&i) {
                if keepdim {
                    out.push(1);
                }
            } else {
                out.push(d);
            }
        }
        out
    }

    fn reduce(
        &self,
        op: &'static str,
        axes: &[usize],
        keepdim: bool,
        init: T,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self> {
        self.check_axes(op, axes)?;
        let kept = self.reduced_shape(axes, true);
        let st = broadcast_strides(&kept, &self.shape);
        let mut out = vec![init; numel(&kept)];
        if axes.len() == 1 && axes[0] + 1 == self.rank() {
            let n = self.last_dim().max(1);
            for (o, chunk) in out.iter_mut().zip(self.data.chunks(n)) {
                *o = chunk.iter().fold(init, |acc, &v| f(acc, v));
            }
        } else {
            for (v, i) in self.data.iter().zip(BroadcastWalk::new(&self.shape, st)) {
                out[i] = f(out[i], *v);
            }
        }
        Ok(Self {
            shape: self.reduced_shape(axes, keepdim),
            data: out,
        })
    }

    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Result<Self> {
        self.reduce("sum", axes, keepdim, T::zero(), |a, b| a + b)
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Result<Self> {
        let count: usize = axes.iter().filter_map(|&a| self.shape.get(a)).product();
        let s = self.reduce("mean", axes, keepdim, T::zero(), |a, b| a + b)?;
        Ok(s.scale(T::one() / T::lit(count.max(1) as f64)))
    }

    pub fn max_axes(&self, axes: &[usize], keepdim: bool) -> Result<Self> {
        self.reduce("max", axes, keepdim, T::neg_infinity(), T::max)
    }

    pub fn sum_all(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Batched matrix product `[.., m, k] x [.., k, n] -> [.., m, n]` with
    /// broadcasting over leading axes.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let err = || Error::Shape {
            op: "matmul",
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        };
        if self.rank() < 2 || other.rank() < 2 {
            return Err(err());
        }
        let (m, k) = (self.shape[self.rank() - 2], self.shape[self.rank() - 1]);
        let (k2, n) = (other.shape[other.rank() - 2], other.shape[other.rank() - 1]);
        if k != k2 {
            return Err(err());
        }
        let lead_a = &self.shape[..self.rank() - 2];
        let lead_b = &other.shape[..other.rank() - 2];
        let lead = broadcast_shapes("matmul", lead_a, lead_b).map_err(|_| err())?;
        let offsets_a: Vec<usize> =
            BroadcastWalk::new(&lead, broadcast_strides(lead_a, &lead)).collect();
        let offsets_b: Vec<usize> =
            BroadcastWalk::new(&lead, broadcast_strides(lead_b, &lead)).collect();
        let mut data = vec![T::zero(); offsets_a.len() * m * n];
        for (batch, (oa, ob)) in offsets_a.iter().zip(&offsets_b).enumerate() {
            let a = &self.data[oa * m * k..(oa + 1) * m * k];
            let b = &other.data[ob * k * n..(ob + 1) * k * n];
            let c = &mut data[batch * m * n..(batch + 1) * m * n];
            gemm(a, b, c, m, k, n);
        }
        let mut shape = lead;
        shape.extend([m, n]);
        Ok(Self { shape, data })
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&self) -> Result<Self> {
        if self.rank() < 2 {
            return Err(Error::InvalidAxis {
                op: "transpose",
                axis: 1,
                rank: self.rank(),
            });
        }
        let r = self.rank();
        let (m, n) = (self.shape[r - 2], self.shape[r - 1]);
        let mut shape = self.shape.clone();
        shape.swap(r - 2, r - 1);
        let mut data = vec![T::zero(); self.data.len()];
        for (src, dst) in self.data.chunks(m * n).zip(data.chunks_mut(m * n)) {
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        Ok(Self { shape, data })
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or(Error::InvalidArgument {
            op: "concat",
            msg: "no tensors to concatenate".into(),
        })?;
        first.check_axes("concat", &[axis])?;
        for p in parts {
            let same = p.rank() == first.rank()
                && p.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Self { shape, data })
    }

    /// The sub-range `start..start+len` of `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        self.check_axes("narrow", &[axis])?;
        if start + len > self.shape[axis] {
            return Err(Error::OutOfRange {
                op: "narrow",
                index: start + len,
                len: self.shape[axis],
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let d = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * d * inner + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self { shape, data })
    }

    /// Gathers entries of `axis` by index; indices may repeat.
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Self> {
        self.check_axes("index_select", &[axis])?;
        let d = self.shape[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= d) {
            return Err(Error::OutOfRange {
                op: "index_select",
                index: bad,
                len: d,
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * d + i) * inner;
                data.extend_from_slice(&self.data[base..base + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = indices.len();
        Ok(Self { shape, data })
    }

    /// Adjoint of [`Tensor::index_select`]: scatters `self` into a tensor whose
    /// `axis` has length `len`, summing over repeated indices.
    pub fn index_add(&self, axis: usize, indices: &[usize], len: usize) -> Result<Self> {
        self.check_axes("index_add", &[axis])?;
        if self.shape[axis] != indices.len() {
            return Err(Error::InvalidArgument {
                op: "index_add",
                msg: format!("axis {axis} has {} entries but {} indices", self.shape[axis], indices.len()),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut shape = self.shape.clone();
        shape[axis] = len;
        let mut data = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            for (j, &i) in indices.iter().enumerate() {
                if i >= len {
                    return Err(Error::OutOfRange {
                        op: "index_add",
                        index: i,
                        len,
                    });
                }
                let src = (o * indices.len() + j) * inner;
                let dst = (o * len + i) * inner;
                for t in 0..inner {
                    data[dst + t] += self.data[src + t];
                }
            }
        }
        Ok(Self { shape, data })
    }

    /// Patch extraction on a channel-last `[B, H, W, C]` map: returns
    /// `[B, P, kh*kw, C]` with padded taps filled by `pad`.
    pub fn im2col(&self, geom: &PatchGeometry, pad: &[T]) -> Result<Self> {
        if self.rank() != 4 || self.shape[1] != geom.in_h || self.shape[2] != geom.in_w {
            return Err(Error::Shape {
                op: "im2col",
                lhs: self.shape.clone(),
                rhs: vec![0, geom.in_h, geom.in_w, 0],
            });
        }
        let (b, c) = (self.shape[0], self.shape[3]);
        if pad.len() != c {
            return Err(Error::Shape {
                op: "im2col",
                lhs: vec![c],
                rhs: vec![pad.len()],
            });
        }
        let pixels = geom.in_h * geom.in_w;
        let with_pad = self
            .reshape(&[b, pixels, c])?
            .concat_pad_row(pad)?;
        let idx = geom.gather_indices(pixels);
        with_pad
            .index_select(1, &idx)?
            .reshape(&[b, geom.positions(), geom.taps(), c])
    }

    fn concat_pad_row(&self, pad: &[T]) -> Result<Self> {
        let (b, c) = (self.shape[0], self.shape[2]);
        let row = Tensor::new(&[1, 1, c], pad.to_vec())?.broadcast_to(&[b, 1, c])?;
        Tensor::concat(&[self, &row], 1)
    }
}

/// Row-major `c += a * b` with `a: m x k`, `b: k x n`.
pub(crate) fn gemm<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Sliding-window geometry over an `in_h x in_w` grid.
///
/// `dilation` spaces the *input* grid (used by transposed convolution, where
/// `dilation - 1` virtual pad entries are inserted between neighbours).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub dilation: usize,
}

impl PatchGeometry {
    pub fn new(in_h: usize, in_w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Self> {
        let g = Self {
            in_h,
            in_w,
            kh,
            kw,
            stride,
            pad_h: pad,
            pad_w: pad,
            dilation: 1,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument { op: "patch geometry", msg });
        if self.kh == 0 || self.kw == 0 || self.stride == 0 || self.dilation == 0 {
            return bad(format!("kernel {}x{}, stride {} and dilation {} must be >= 1", self.kh, self.kw, self.stride, self.dilation));
        }
        if self.in_h == 0 || self.in_w == 0 {
            return bad("empty input grid".into());
        }
        if self.virtual_h() + 2 * self.pad_h < self.kh || self.virtual_w() + 2 * self.pad_w < self.kw {
            return bad(format!(
                "kernel {}x{} larger than padded input {}x{}",
                self.kh,
                self.kw,
                self.virtual_h() + 2 * self.pad_h,
                self.virtual_w() + 2 * self.pad_w
            ));
        }
        Ok(())
    }

    fn virtual_h(&self) -> usize {
        (self.in_h - 1) * self.dilation + 1
    }

    fn virtual_w(&self) -> usize {
        (self.in_w - 1) * self.dilation + 1
    }

    pub fn out_h(&self) -> usize {
        (self.virtual_h() + 2 * self.pad_h - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.virtual_w() + 2 * self.pad_w - self.kw) / self.stride + 1
    }

    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }

    /// Flat pixel index of every tap of every output position, row-major over
    /// positions then taps. Taps that fall on padding (or between dilated
    /// input pixels) get `pad_index`.
    pub fn gather_indices(&self, pad_index: usize) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.positions() * self.taps());
        for oy in 0..self.out_h() {
            for ox in 0..self.out_w() {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let vy = (oy * self.stride + ky) as isize - self.pad_h as isize;
                        let vx = (ox * self.stride + kx) as isize - self.pad_w as isize;
                        idx.push(self.source(vy, vx).unwrap_or(pad_index));
                    }
                }
            }
        }
        idx
    }

    fn source(&self, vy: isize, vx: isize) -> Option<usize> {
        if vy < 0 || vx < 0 {
            return None;
        }
        let (vy, vx) = (vy as usize, vx as usize);
        let d = self.dilation;
        if vy % d != 0 || vx % d != 0 {
            return None;
        }
        let (y, x) = (vy / d, vx / d);
        (y < self.in_h && x < self.in_w).then_some(y * self.in_w + x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_expansion() {
        let i2 = t(&[2, 2], &[1., 0., 0., 1.]);
        let col = t(&[2, 1], &[1., 2.]);
        assert_eq!(i2.matmul(&col).unwrap(), col);
        let a = t(&[1, 2], &[1., 2.]);
        let b = t(&[2, 1], &[3., 4.]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_broadcasts_leading_axes() {
        let a = Tensor::<f64>::from_fn(&[2, 3, 2, 4], |i| i as f64 * 0.1);
        let b = Tensor::<f64>::from_fn(&[4, 5], |i| (i as f64).sin());
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2, 5]);
        let a0 = a.narrow(0, 1, 1).unwrap().narrow(1, 2, 1).unwrap().reshape(&[2, 4]).unwrap();
        let c0 = c.narrow(0, 1, 1).unwrap().narrow(1, 2, 1).unwrap().reshape(&[2, 5]).unwrap();
        assert!(a0.matmul(&b).unwrap().max_abs_diff(&c0) < 1e-12);
    }

    #[test]
    fn reductions() {
        assert_eq!(t(&[3], &[1., 2., 3.]).sum_axes(&[0], false).unwrap().item(), 6.0);
        let m = t(&[2, 2], &[1., 3., 3., 5.]).mean_axes(&[0], false).unwrap();
        assert_eq!(m.data(), &[2.0, 4.0]);
        assert_eq!(t(&[2], &[-1., -5.]).max_axes(&[0], false).unwrap().item(), -1.0);
        assert!(matches!(
            t(&[2], &[1., 2.]).sum_axes(&[1], false),
            Err(Error::InvalidAxis { .. })
        ));
    }

    #[test]
    fn concat_and_slice() {
        let c = Tensor::concat(&[&t(&[1, 1], &[1.]), &t(&[1, 1], &[2.])], 1).unwrap();
        assert_eq!((c.shape(), c.data()), (&[1usize, 2][..], &[1.0, 2.0][..]));
        let p = t(&[3], &[7., 8., 9.]);
        assert_eq!(p.narrow(0, 1, 2).unwrap().data(), &[8.0, 9.0]);
        assert!(matches!(p.narrow(0, 2, 2), Err(Error::OutOfRange { .. })));
        assert!(matches!(p.index_select(0, &[3]), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn im2col_matches_nested_loop_gather() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 3, 1], |i| i as f64 + 1.0);
        let g = PatchGeometry::new(3, 3, 2, 2, 1, 0).unwrap();
        let cols = x.im2col(&g, &[0.0]).unwrap();
        assert_eq!(cols.shape(), &[1, 4, 4, 1]);
        let mut expected = Vec::new();
        for oy in 0..2 {
            for ox in 0..2 {
                for ky in 0..2 {
                    for kx in 0..2 {
                        expected.push(x.data()[(oy + ky) * 3 + ox + kx]);
                    }
                }
            }
        }
        assert_eq!(cols.data(), &expected[..]);
    }

    #[test]
    fn patch_geometry_sizes() {
        let g = PatchGeometry::new(28, 28, 5, 5, 2, 0).unwrap();
        assert_eq!((g.out_h(), g.out_w()), (12, 12));
        let g = PatchGeometry::new(5, 5, 3, 3, 1, 1).unwrap();
        assert_eq!((g.out_h(), g.out_w()), (5, 5));
        assert!(PatchGeometry::new(2, 2, 3, 3, 1, 0).is_err());
    }

    #[test]
    fn broadcast_error_names_both_shapes() {
        let err = Tensor::<f64>::zeros(&[2, 3]).add(&Tensor::zeros(&[4])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
    }

    fn naive_broadcast_add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let shape = broadcast_shapes("t", a.shape(), b.shape()).unwrap();
        let rank = shape.len();
        let fetch = |x: &Tensor<f64>, idx: &[usize]| {
            let off = rank - x.rank();
            let mut flat = 0;
            for (i, &d) in x.shape().iter().enumerate() {
                let j = if d == 1 { 0 } else { idx[i + off] };
                flat = flat * d + j;
            }
            x.data()[flat]
        };
        let n = numel(&shape);
        let mut data = Vec::with_capacity(n);
        for flat in 0..n {
            let mut idx = vec![0; rank];
            let mut rem = flat;
            for ax in (0..rank).rev() {
                idx[ax] = rem % shape[ax];
                rem /= shape[ax];
            }
            data.push(fetch(a, &idx) + fetch(b, &idx));
        }
        Tensor::new(&shape, data).unwrap()
    }

    fn shape_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        prop::collection::vec(1usize..4, 1..4).prop_flat_map(|full| {
            let n = full.len();
            (Just(full), prop::collection::vec(any::<bool>(), n), 0..=n)
        })
        .prop_map(|(full, ones, drop)| {
            let other: Vec<usize> = full
                .iter()
                .zip(&ones)
                .map(|(&d, &one)| if one { 1 } else { d })
                .skip(drop)
                .collect();
            (full, other)
        })
    }

    proptest! {
        #[test]
        fn broadcast_matches_materialized_loop((sa, sb) in shape_pair(), seed in 0u64..1000) {
            let a = Tensor::<f64>::from_fn(&sa, |i| (i as f64 + seed as f64).sin());
            let b = Tensor::<f64>::from_fn(&sb, |i| (i as f64 * 0.7).cos());
            prop_assert_eq!(a.add(&b).unwrap(), naive_broadcast_add(&a, &b));
            prop_assert_eq!(b.add(&a).unwrap(), naive_broadcast_add(&b, &a));
            let summed = a.add(&b).unwrap().sum_to_shape(&sb).unwrap();
            prop_assert_eq!(summed.shape(), &sb[..]);
        }

        #[test]
        fn index_add_is_adjoint_of_index_select(len in 1usize..6, picks in prop::collection::vec(0usize..6, 1..8)) {
            let idx: Vec<usize> = picks.into_iter().map(|p| p % len).collect();
            let x = Tensor::<f64>::from_fn(&[2, len, 3], |i| (i as f64).cos());
            let g = Tensor::<f64>::from_fn(&[2, idx.len(), 3], |i| (i as f64 * 0.3).sin());
            let lhs: f64 = x.index_select(1, &idx).unwrap().mul(&g).unwrap().sum_all();
            let rhs: f64 = x.mul(&g.index_add(1, &idx, len).unwrap()).unwrap().sum_all();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
