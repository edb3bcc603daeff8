//! Floating-point element types.
//!
//! Training runs at `f32`; every oracle test runs at `f64`. Numerical guards
//! are tied to the element type so the same code is sharp at 64-bit and
//! stable at 32-bit.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, NumAssign};

pub trait Real:
    Float
    + FloatConst
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Bit width, 32 or 64.
    const BITS: u32;
    /// Distance from a domain boundary at which derivatives are evaluated
    /// (acosh at 1, sqrt at 0) and below which domain errors are raised.
    const GUARD_EPS: f64;
    /// Relative on-manifold tolerance for `|<x,x>_L - 1/K|`.
    const MANIFOLD_TOL: f64;
    /// Tangency tolerance for `|<v,x>_L|`, relative to the magnitudes involved.
    const TANGENT_TOL: f64;
    /// Below this argument `sinh(a)/a` is evaluated by its Taylor series.
    const SINHC_CUTOFF: f64;
    /// Below this `|b - 1|`, `acosh(b)/sqrt(b^2 - 1)` is evaluated by its series.
    const ACOSH_RATIO_CUTOFF: f64;

    fn lit(v: f64) -> Self;
    fn f64(self) -> f64;
    fn to_f32(self) -> f32;
    fn from_f32(v: f32) -> Self;
}

impl Real for f32 {
    const BITS: u32 = 32;
    const GUARD_EPS: f64 = 1e-7;
    const MANIFOLD_TOL: f64 = 1e-5;
    const TANGENT_TOL: f64 = 1e-4;
    const SINHC_CUTOFF: f64 = 1e-3;
    const ACOSH_RATIO_CUTOFF: f64 = 1e-3;

    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
}

impl Real for f64 {
    const BITS: u32 = 64;
    const GUARD_EPS: f64 = 1e-12;
    const MANIFOLD_TOL: f64 = 1e-10;
    const TANGENT_TOL: f64 = 1e-8;
    const SINHC_CUTOFF: f64 = 1e-4;
    const ACOSH_RATIO_CUTOFF: f64 = 1e-5;

    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self as f32
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
}

/// `sinh(a) / a`, continuous at zero.
pub fn sinhc<T: Real>(a: T) -> T {
    if a.abs().f64() < T::SINHC_CUTOFF {
        let a2 = a * a;
        T::one() + a2 / T::lit(6.0) + a2 * a2 / T::lit(120.0)
    } else {
        a.sinh() / a
    }
}

/// Derivative of [`sinhc`]: `(a cosh a - sinh a) / a^2`.
pub fn sinhc_grad<T: Real>(a: T) -> T {
    if a.abs().f64() < T::SINHC_CUTOFF {
        a / T::lit(3.0) + a * a * a / T::lit(30.0)
    } else {
        (a * a.cosh() - a.sinh()) / (a * a)
    }
}

/// `acosh(b) / sqrt(b^2 - 1)` for `b >= 1`, i.e. `t / sinh(t)` with `b = cosh t`.
/// Finite at `b = 1` where it equals one.
pub fn acosh_ratio<T: Real>(b: T) -> T {
    // below 1 only through rounding; treat as the boundary
    let u = (b - T::one()).max(T::zero());
    if u.f64() < T::ACOSH_RATIO_CUTOFF {
        T::one() - u / T::lit(3.0) + T::lit(2.0 / 15.0) * u * u
    } else {
        b.acosh() / (b * b - T::one()).sqrt()
    }
}

/// Derivative of [`acosh_ratio`] with respect to `b`.
pub fn acosh_ratio_grad<T: Real>(b: T) -> T {
    let u = (b - T::one()).max(T::zero());
    if u.f64() < T::ACOSH_RATIO_CUTOFF {
        T::lit(-1.0 / 3.0) + T::lit(4.0 / 15.0) * u
    } else {
        let s2 = b * b - T::one();
        // d/db [acosh(b) s^-1] = 1/s^2 - acosh(b) b / s^3
        (T::one() - b * acosh_ratio(b)) / s2
    }
}
