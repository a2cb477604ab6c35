//! Composite trapezoid sums on a (possibly nonuniform) mesh whose integrand
//! may jump at mesh nodes.

use crate::scalar::{lit, Real};

/// One trapezoid panel `[a, b]` using the right limit at `a` and the left
/// limit at `b`.
#[inline]
pub fn panel<S: Real>(a: S, b: S, right_at_a: S, left_at_b: S) -> S {
    (b - a) * (right_at_a + left_at_b) * lit(0.5)
}

/// Running integrals `∫_{t_0}^{t_i}` for every node `i` of the mesh.
/// `left[i]` / `right[i]` are the one-sided integrand values at node `i`.
pub fn cumulative<S: Real>(t: &[S], left: &[S], right: &[S]) -> Vec<S> {
    let mut out = Vec::with_capacity(t.len());
    let mut acc = S::zero();
    out.push(acc);
    for i in 1..t.len() {
        acc = acc + panel(t[i - 1], t[i], right[i - 1], left[i]);
        out.push(acc);
    }
    out
}

/// Tail integrals `∫_{t_i}^{t_last}` for every node `i`.
pub fn tail<S: Real>(t: &[S], left: &[S], right: &[S]) -> Vec<S> {
    let n = t.len();
    let mut out = vec![S::zero(); n];
    for i in (0..n.saturating_sub(1)).rev() {
        out[i] = out[i + 1] + panel(t[i], t[i + 1], right[i], left[i + 1]);
    }
    out
}

/// Plain composite trapezoid of a continuous integrand.
pub fn trapezoid<S: Real>(t: &[S], v: &[S]) -> S {
    t.windows(2)
        .zip(v.windows(2))
        .map(|(t, v)| panel(t[0], t[1], v[0], v[1]))
        .sum()
}
