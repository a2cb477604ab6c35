//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used throughout the library (`f32` or `f64`).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Sum + Default + Send + Sync + 'static
{
    /// Machine epsilon scaled to something useful as a relative tolerance floor.
    fn tiny() -> Self {
        Self::epsilon() * lit(16.0)
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Sum + Default + Send + Sync + 'static
{
}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<S: Real>(x: f64) -> S {
    S::from_f64(x).expect("literal representable in scalar type")
}

#[inline]
pub fn from_usize<S: Real>(n: usize) -> S {
    S::from_usize(n).expect("integer representable in scalar type")
}

/// `(1 - e^{-k h}) / k`, continuous through `k = 0`.
#[inline]
pub fn one_minus_exp_over<S: Real>(k: S, h: S) -> S {
    if k == S::zero() {
        h
    } else {
        -(-(k * h)).exp_m1() / k
    }
}
