//! Bracketed scalar root finding: geometric bracket search followed by
//! bisection safeguarded secant steps.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// An interval `[lo, hi]` on which the function changes sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket<S> {
    pub lo: S,
    pub hi: S,
    pub f_lo: S,
    pub f_hi: S,
}

impl<S: Real> Bracket<S> {
    pub fn new<F: FnMut(S) -> S>(mut f: F, lo: S, hi: S) -> Option<Self> {
        let (f_lo, f_hi) = (f(lo), f(hi));
        Self::from_values(lo, hi, f_lo, f_hi)
    }

    pub fn from_values(lo: S, hi: S, f_lo: S, f_hi: S) -> Option<Self> {
        if f_lo.is_nan() || f_hi.is_nan() {
            return None;
        }
        (f_lo.signum() != f_hi.signum() || f_lo == S::zero() || f_hi == S::zero())
            .then_some(Bracket { lo, hi, f_lo, f_hi })
    }
}

/// Searches for a sign change of `f` on `(0, ∞)` by expanding geometrically
/// around `start` in both directions: `start·factor^{±k}`, `k ≤ max_steps`.
pub fn expand_positive<S: Real, F: FnMut(S) -> S>(
    mut f: F,
    start: S,
    factor: S,
    max_steps: usize,
) -> Result<Bracket<S>> {
    let mut trace = Vec::new();
    let f0 = f(start);
    trace.push((start.to_f64().unwrap_or(f64::NAN), f0.to_f64().unwrap_or(f64::NAN)));
    if f0 == S::zero() {
        return Ok(Bracket { lo: start, hi: start, f_lo: f0, f_hi: f0 });
    }
    let (mut up, mut f_up) = (start, f0);
    let (mut down, mut f_down) = (start, f0);
    for _ in 0..max_steps {
        let next_up = up * factor;
        let f_next = f(next_up);
        trace.push((next_up.to_f64().unwrap_or(f64::NAN), f_next.to_f64().unwrap_or(f64::NAN)));
        if let Some(b) = Bracket::from_values(up, next_up, f_up, f_next) {
            return Ok(b);
        }
        if f_next.is_finite() {
            up = next_up;
            f_up = f_next;
        }

        let next_down = down / factor;
        let f_next = f(next_down);
        trace.push((next_down.to_f64().unwrap_or(f64::NAN), f_next.to_f64().unwrap_or(f64::NAN)));
        if let Some(b) = Bracket::from_values(next_down, down, f_next, f_down) {
            return Ok(b);
        }
        if f_next.is_finite() {
            down = next_down;
            f_down = f_next;
        }
    }
    Err(Error::NoBracket { trace })
}

/// Stopping rule for [`solve`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerance<S> {
    pub x_abs: S,
    pub x_rel: S,
    pub max_iter: usize,
}

impl<S: Real> Default for Tolerance<S> {
    fn default() -> Self {
        Tolerance { x_abs: S::epsilon(), x_rel: S::tiny(), max_iter: 200 }
    }
}

/// Finds a root inside `bracket`. Secant steps are taken while they land
/// strictly inside the bracket and the bracket keeps halving at least every
/// other step; otherwise the midpoint is used.
pub fn solve<S: Real, F: FnMut(S) -> S>(mut f: F, bracket: Bracket<S>, tol: Tolerance<S>) -> Result<S> {
    let Bracket { mut lo, mut hi, mut f_lo, mut f_hi } = bracket;
    if f_lo == S::zero() {
        return Ok(lo);
    }
    if f_hi == S::zero() {
        return Ok(hi);
    }
    let half = lit::<S>(0.5);
    let mut width_two_ago = (hi - lo).abs() * lit(2.0);
    let mut width_prev = (hi - lo).abs();
    for _ in 0..tol.max_iter {
        let width = (hi - lo).abs();
        let scale = lo.abs().max(hi.abs());
        if width <= tol.x_abs + tol.x_rel * scale {
            return Ok(if f_lo.abs() < f_hi.abs() { lo } else { hi });
        }
        let mid = lo + (hi - lo) * half;
        let secant = hi - f_hi * (hi - lo) / (f_hi - f_lo);
        let shrinking = width <= width_two_ago * half;
        let inside = secant.is_finite() && secant > lo.min(hi) && secant < lo.max(hi);
        let x = if inside && shrinking { secant } else { mid };
        let fx = f(x);
        if fx.is_nan() {
            return Err(Error::NonFinite(format!("root function at {x:?}")));
        }
        if fx == S::zero() {
            return Ok(x);
        }
        if fx.signum() == f_lo.signum() {
            lo = x;
            f_lo = fx;
        } else {
            hi = x;
            f_hi = fx;
        }
        width_two_ago = width_prev;
        width_prev = width;
    }
    Err(Error::NoConvergence { iterations: tol.max_iter })
}
