//! Brute-force maximizers used as ground truth: exhaustive search over
//! quantized atom-only plans, and projected gradient ascent over rate
//! vectors plus an initial gulp.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{ConsumptionPlan, MarketParams};
use crate::paths::{cell_price, evaluate, utility0};
use crate::preferences::FelicitySpec;
use crate::scalar::{from_usize, lit, Real};

/// Refuse exhaustive searches above this many candidates.
pub const CANDIDATE_LIMIT: f64 = 1e7;
/// Exhaustive mode allows at most this many control points.
pub const MAX_POINTS: usize = 6;

/// Atom-only problem: masses at `times`, each a whole number of
/// present-value quanta `w / quanta`.
#[derive(Clone)]
pub struct DiscretizedProblem<S: Real> {
    pub times: Vec<S>,
    pub quanta: usize,
    pub spec: FelicitySpec<S>,
    pub params: MarketParams<S>,
}

impl<S: Real> std::fmt::Debug for DiscretizedProblem<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscretizedProblem")
            .field("times", &self.times)
            .field("quanta", &self.quanta)
            .field("spec", &self.spec)
            .finish_non_exhaustive()
    }
}

impl<S: Real> DiscretizedProblem<S> {
    /// `n` equally spaced points on `[0, T)`.
    pub fn equispaced(n: usize, quanta: usize, spec: FelicitySpec<S>, params: MarketParams<S>) -> Self {
        let h = params.horizon / from_usize(n.max(1));
        DiscretizedProblem { times: (0..n).map(|i| h * from_usize(i)).collect(), quanta, spec, params }
    }

    /// Allocations with total at most `quanta` over `n` points: `C(quanta + n, n)`.
    pub fn candidates(&self) -> f64 {
        let (q, n) = (self.quanta as f64, self.times.len() as f64);
        (1..=self.times.len()).fold(1.0, |c, i| c * (q + i as f64) / i as f64).max(if n == 0.0 { 1.0 } else { 0.0 })
    }

    fn check(&self) -> Result<()> {
        let n = self.times.len();
        if n == 0 || n > MAX_POINTS || self.quanta == 0 {
            return Err(Error::InvalidParams(vec![format!("exhaustive search needs 1..={MAX_POINTS} points and quanta ≥ 1")]));
        }
        if self.times.windows(2).any(|w| !(w[0] < w[1])) || self.times[0] < S::zero() || self.times[n - 1] > self.params.horizon {
            return Err(Error::InvalidParams(vec!["oracle times must increase inside [0, T]".into()]));
        }
        let c = self.candidates();
        if c > CANDIDATE_LIMIT {
            return Err(Error::TooManyCandidates { candidates: c, limit: CANDIDATE_LIMIT });
        }
        Ok(())
    }

    fn plan(&self, counts: &[usize]) -> Result<ConsumptionPlan<S>> {
        let quantum = self.params.w / from_usize(self.quanta);
        let atoms = self
            .times
            .iter()
            .zip(counts)
            .filter(|(_, k)| **k > 0)
            .map(|(&t, &k)| (t, quantum * from_usize(k) / self.params.price(t)))
            .collect();
        ConsumptionPlan::new(self.params.horizon, self.params.grid_n, atoms, vec![S::zero(); self.params.grid_n])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult<S> {
    pub plan: ConsumptionPlan<S>,
    pub utility: S,
}

/// Extends `prefix` to length `n` in every way spending at most `budget` more quanta.
fn allocations(n: usize, budget: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if prefix.len() == n {
        out.push(prefix.clone());
        return;
    }
    for k in 0..=budget {
        prefix.push(k);
        allocations(n, budget - k, prefix, out);
        prefix.pop();
    }
}

/// Best atom-only plan on the problem's points.
pub fn exhaustive_search<S: Real>(prob: &DiscretizedProblem<S>) -> Result<OracleResult<S>> {
    prob.check()?;
    if prob.params.w == S::zero() {
        let plan = ConsumptionPlan::empty_for(&prob.params);
        let utility = utility0(&plan, &prob.spec, &prob.params)?;
        return Ok(OracleResult { plan, utility });
    }
    let n = prob.times.len();
    let best = (0..=prob.quanta)
        .into_par_iter()
        .map(|first| {
            let mut rest = Vec::new();
            allocations(n, prob.quanta - first, &mut vec![first], &mut rest);
            let mut best: Option<(S, Vec<usize>)> = None;
            for counts in rest {
                let u = utility0(&prob.plan(&counts)?, &prob.spec, &prob.params)?;
                if best.as_ref().is_none_or(|b| u > b.0) {
                    best = Some((u, counts));
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<(S, Vec<usize>)>, c| match acc {
            Some(a) if a.0 >= c.0 => Some(a),
            _ => Some(c),
        })
        .expect("at least one allocation");
    Ok(OracleResult { plan: prob.plan(&best.1)?, utility: best.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AscentOptions {
    pub steps: usize,
    /// Stop once no coordinate moves by more than `tol·w` in one step.
    pub tol: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions { steps: 5000, tol: 1e-13 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentResult<S> {
    pub plan: ConsumptionPlan<S>,
    pub utility: S,
    pub iterations: usize,
    /// Stopped because no step improved `U_0`.
    pub stalled: bool,
    pub history: Vec<S>,
}

/// Euclidean projection onto `{z ≥ 0, Σz = total}`.
pub fn project_simplex<S: Real>(z: &[S], total: S) -> Vec<S> {
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite coordinates"));
    let mut cum = S::zero();
    let mut theta = S::zero();
    for (i, &s) in sorted.iter().enumerate() {
        cum = cum + s;
        let candidate = (cum - total) / from_usize(i + 1);
        if s - candidate > S::zero() {
            theta = candidate;
        }
    }
    let mut out: Vec<S> = z.iter().map(|&x| (x - theta).max(S::zero())).collect();
    // remove the rounding residue from the largest coordinate
    let sum: S = out.iter().copied().sum();
    if let Some(i) = (0..out.len()).max_by(|&a, &b| out[a].partial_cmp(&out[b]).unwrap()) {
        out[i] = (out[i] + total - sum).max(S::zero());
    }
    out
}

/// Present-value coordinates: gulp at 0 first, then one entry per cell.
fn to_pv<S: Real>(plan: &ConsumptionPlan<S>, params: &MarketParams<S>) -> Vec<S> {
    let gulp = plan.atoms.iter().filter(|a| a.0 == S::zero()).map(|a| a.1).sum::<S>();
    let mut z = vec![gulp];
    z.extend(plan.rate.iter().enumerate().map(|(k, &c)| c * cell_price(params, k)));
    z
}

fn from_pv<S: Real>(z: &[S], params: &MarketParams<S>) -> Result<ConsumptionPlan<S>> {
    let atoms = if z[0] > S::zero() { vec![(S::zero(), z[0])] } else { vec![] };
    let rate = z[1..].iter().enumerate().map(|(k, &v)| v / cell_price(params, k)).collect();
    ConsumptionPlan::new(params.horizon, params.grid_n, atoms, rate)
}

/// `∂U_0/∂z` in present-value coordinates.
fn pv_gradient<S: Real>(plan: &ConsumptionPlan<S>, spec: &FelicitySpec<S>, params: &MarketParams<S>) -> Result<(S, Vec<S>)> {
    let e = evaluate(plan, spec, params)?;
    let mut out = vec![e.grad_at(S::zero())];
    out.extend((0..params.grid_n).map(|k| e.cell_integral(k) / cell_price(params, k)));
    Ok((e.u0(), out))
}

/// Maximizes `U_0` over rates and an initial gulp on the budget simplex,
/// from `start` (uniform rate if `None`).
pub fn projected_gradient_ascent<S: Real>(
    params: &MarketParams<S>,
    spec: &FelicitySpec<S>,
    start: Option<&ConsumptionPlan<S>>,
    opts: &AscentOptions,
) -> Result<AscentResult<S>> {
    params.validate()?;
    let w = params.w;
    let mut z = match start {
        Some(p) => {
            if !p.matches(params) {
                return Err(Error::GridMismatch);
            }
            let z = to_pv(p, params);
            if p.atoms.iter().any(|a| a.0 > S::zero()) {
                return Err(Error::InvalidParams(vec!["ascent start may only carry an atom at 0".into()]));
            }
            project_simplex(&z, w)
        }
        None => {
            let mut z = vec![w / from_usize(params.grid_n); params.grid_n + 1];
            z[0] = S::zero();
            project_simplex(&z, w)
        }
    };
    // accelerated projected gradient with backtracking and restart on any
    // loss of utility; history records the accepted iterates only
    let mut u = utility0(&from_pv(&z, params)?, spec, params)?;
    let mut history = vec![u];
    let mut previous = z.clone();
    let mut momentum = S::one();
    let mut eta = S::zero();
    let mut stalled = false;
    let mut iterations = 0;
    let tol = w * lit(opts.tol);
    while iterations < opts.steps {
        iterations += 1;
        let next_momentum = (S::one() + (S::one() + lit::<S>(4.0) * momentum * momentum).sqrt()) / lit(2.0);
        let beta = (momentum - S::one()) / next_momentum;
        let y = if beta > S::zero() {
            let raw: Vec<S> = z.iter().zip(&previous).map(|(&a, &b)| a + beta * (a - b)).collect();
            project_simplex(&raw, w)
        } else {
            z.clone()
        };
        let (uy, grad) = pv_gradient(&from_pv(&y, params)?, spec, params)?;
        if eta == S::zero() {
            let scale = grad.iter().fold(S::zero(), |m, g| m.max(g.abs()));
            eta = if scale > S::zero() { w / scale } else { S::one() };
        }
        let floor = w * lit(1e-300);
        let mut accepted = None;
        while eta > floor {
            let raw: Vec<S> = y.iter().zip(&grad).map(|(&a, &g)| a + eta * g).collect();
            let trial = project_simplex(&raw, w);
            let (lin, sq) = trial.iter().zip(&y).zip(&grad).fold((S::zero(), S::zero()), |(l, q), ((&a, &b), &g)| {
                (l + g * (a - b), q + (a - b) * (a - b))
            });
            let ut = utility0(&from_pv(&trial, params)?, spec, params)?;
            if ut >= uy + lin - sq / (lit::<S>(2.0) * eta) {
                accepted = Some((trial, ut));
                break;
            }
            eta = eta * lit(0.5);
        }
        let Some((trial, ut)) = accepted else {
            stalled = true;
            break;
        };
        if !(ut > u) {
            if beta > S::zero() {
                momentum = S::one();
                previous = z.clone();
                continue;
            }
            stalled = true;
            break;
        }
        let step = trial.iter().zip(&z).fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        previous = std::mem::replace(&mut z, trial);
        u = ut;
        history.push(u);
        momentum = next_momentum;
        eta = eta * lit(1.25);
        if step <= tol {
            break;
        }
    }
    Ok(AscentResult { plan: from_pv(&z, params)?, utility: u, iterations, stalled, history })
}

/// Oracle against candidate utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison<S> {
    pub oracle: S,
    pub candidate: S,
    /// `(oracle - candidate) / |candidate|`; positive means the oracle won.
    pub gap: S,
}

pub fn compare<S: Real>(oracle: S, candidate: S) -> Comparison<S> {
    Comparison { oracle, candidate, gap: (oracle - candidate) / candidate.abs() }
}
