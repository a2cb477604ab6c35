//! Closed-form optimal plan for Epstein–Zin felicity under the
//! exponential memory kernel.
//!
//! With `γ = α(δ - r)` the optimal satisfaction decays like `e^{-γt}` on
//! the consumption interval and like `e^{-βt}` outside it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{ConsumptionPlan, MarketParams, PathSample};
use crate::numerics::roots::{expand_positive, solve, Tolerance};
use crate::preferences::{validate, EzParams};
use crate::scalar::{lit, one_minus_exp_over, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EzCase {
    Gulp,
    Wait,
    Immediate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EzSolution<S> {
    pub case: EzCase,
    pub tau_bar: S,
    pub tau_low: Option<S>,
    pub k_star: Option<S>,
    #[serde(rename = "K_star")]
    pub big_k_star: Option<S>,
    #[serde(rename = "M_star")]
    pub m_star: Option<S>,
    pub gulp: S,
    /// Set when `r + β/α - δ ≤ 0` forced the immediate case.
    pub assumption_failed: bool,
    pub plan: ConsumptionPlan<S>,
    /// Closed-form `Y` on the grid.
    pub y_path: PathSample<S>,
    #[serde(skip)]
    shape: Shape<S>,
}

/// Closed-form description: rate `amp·e^{-γt}` on `[lo, hi]`, `Y` equal to
/// `y_lo·e^{-γ(t-lo)}` there.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Shape<S> {
    y0: S,
    beta: S,
    gamma: S,
    lo: S,
    hi: S,
    amp: S,
    atom: S,
}

impl<S: Real> Shape<S> {
    fn rate(&self, t: S) -> S {
        if t >= self.lo && t <= self.hi && self.hi > self.lo {
            self.amp * (-self.gamma * t).exp()
        } else {
            S::zero()
        }
    }

    fn y(&self, t: S) -> S {
        let start = self.y0 + self.beta * self.atom;
        if self.hi <= self.lo || t <= self.lo {
            return start * (-self.beta * t).exp();
        }
        let y_lo = start * (-self.beta * self.lo).exp();
        if t <= self.hi {
            y_lo * (-self.gamma * (t - self.lo)).exp()
        } else {
            y_lo * (-self.gamma * (self.hi - self.lo)).exp() * (-self.beta * (t - self.hi)).exp()
        }
    }
}

impl<S: Real> EzSolution<S> {
    /// Closed-form consumption rate at `t`.
    pub fn rate_at(&self, t: S) -> S {
        self.shape.rate(t)
    }

    /// Closed-form satisfaction level at `t` (right limit).
    pub fn y_at(&self, t: S) -> S {
        self.shape.y(t)
    }

    /// Left and right ends of the consumption interval.
    pub fn consumption_interval(&self) -> (S, S) {
        (self.shape.lo, self.shape.hi)
    }
}

fn kappa<S: Real>(p: &MarketParams<S>, ez: &EzParams<S>) -> S {
    ez.delta + p.beta * (S::one() - ez.alpha.recip())
}

/// `r + β/α - δ`.
fn drift<S: Real>(p: &MarketParams<S>, ez: &EzParams<S>) -> S {
    p.r + p.beta / ez.alpha - ez.delta
}

/// `γ = α(δ - r)`.
pub fn gamma<S: Real>(p: &MarketParams<S>, ez: &EzParams<S>) -> S {
    ez.alpha * (ez.delta - p.r)
}

/// End of the consumption interval. May be nonpositive.
pub fn tau_bar<S: Real>(p: &MarketParams<S>, ez: &EzParams<S>) -> S {
    let k = kappa(p, ez);
    let rb = p.r + p.beta;
    if k == S::zero() {
        p.horizon - rb.recip()
    } else {
        // ln((r+β)/(r+β/α-δ)) written to stay accurate for small κ
        p.horizon + (-k / rb).ln_1p() / k
    }
}

/// Wealth-to-satisfaction threshold separating the gulp and wait cases.
pub fn k_star<S: Real>(p: &MarketParams<S>, ez: &EzParams<S>, tau_bar: S) -> S {
    let g = gamma(p, ez);
    let e = p.r + g;
    (p.beta - g) / p.beta * one_minus_exp_over(e, tau_bar)
}

/// Start of consumption in the wait case as a function of `K = M(r+β)/β`.
fn tau_low_of<S: Real>(p: &MarketParams<S>, ez: &EzParams<S>, big_k: S) -> S {
    (big_k.ln() + p.y.ln() / ez.alpha) / drift(p, ez)
}

/// Present value spent in the wait case for a trial `K`. Reduces to
/// `K^{-α}[(K y^{1/α})^{-α(r+γ)/(β-γ)} - e^{-(r+γ)τ̄}](β-γ)/(β(r+γ))` and,
/// when `r + γ = 0`, to `K^{-α}((β-γ)τ̄ - α ln K - ln y)/β`.
pub fn wait_spending<S: Real>(p: &MarketParams<S>, ez: &EzParams<S>, tau_bar: S, big_k: S) -> S {
    let g = gamma(p, ez);
    let e = p.r + g;
    let low = tau_low_of(p, ez, big_k);
    big_k.powf(-ez.alpha) * (p.beta - g) / p.beta * (-e * low).exp() * one_minus_exp_over(e, tau_bar - low)
}

/// Price-weighted average of `amp·e^{-γt}` restricted to `[lo, hi]` over
/// each grid cell, so the plan spends exactly the closed-form amount.
fn cell_rates<S: Real>(p: &MarketParams<S>, shape: &Shape<S>) -> Vec<S> {
    let h = p.step();
    let unit = one_minus_exp_over(p.r, h);
    let e = p.r + shape.gamma;
    (0..p.grid_n)
        .map(|k| {
            let (a, b) = (p.time(k).max(shape.lo), p.time(k + 1).min(shape.hi));
            if b <= a {
                return S::zero();
            }
            let spent = shape.amp * (-e * a).exp() * one_minus_exp_over(e, b - a);
            spent / (p.price(p.time(k)) * unit)
        })
        .collect()
}

/// Optimal plan for Epstein–Zin felicity.
pub fn solve_ez<S: Real>(p: &MarketParams<S>, ez: &EzParams<S>) -> Result<EzSolution<S>> {
    p.validate()?;
    let problems: Vec<String> = validate(ez, p);
    let assumption_failed = problems.iter().any(|m| m.starts_with("r + β/α"));
    let fatal: Vec<String> = problems.into_iter().filter(|m| !m.starts_with("r + β/α")).collect();
    if !fatal.is_empty() {
        return Err(Error::InvalidParams(fatal));
    }
    let g = gamma(p, ez);
    let tb = if assumption_failed { S::neg_infinity() } else { tau_bar(p, ez) };
    let mut shape = Shape { y0: p.y, beta: p.beta, gamma: g, ..Default::default() };

    if tb <= S::zero() {
        shape.atom = p.w;
        return Ok(finish(p, shape, EzCase::Immediate, tb, None, None, None, assumption_failed));
    }
    let ks = k_star(p, ez, tb);
    shape.hi = tb;
    if p.w >= ks * p.y {
        let gulp = (p.w - ks * p.y) / (S::one() + p.beta * ks);
        let y0 = (p.y + p.beta * p.w) / (S::one() + p.beta * ks);
        shape.atom = gulp;
        shape.amp = (S::one() - g / p.beta) * y0;
        return Ok(finish(p, shape, EzCase::Gulp, tb, None, Some(ks), None, false));
    }

    let f = |k: S| wait_spending(p, ez, tb, k) - p.w;
    let bracket = expand_positive(f, S::one(), lit(2.0), 200)?;
    let big_k = solve(f, bracket, Tolerance::default())?;
    let low = tau_low_of(p, ez, big_k);
    let arg = big_k * p.y.powf(ez.alpha.recip());
    if !(arg > S::one()) || !(low < tb) {
        return Err(Error::Domain(format!(
            "wait-case start time out of range: K y^(1/α) = {arg:?}, τ_low = {low:?}, τ_bar = {tb:?}"
        )));
    }
    shape.lo = low;
    shape.amp = (p.beta - g) / p.beta * big_k.powf(-ez.alpha);
    let m_star = p.beta * big_k / (p.r + p.beta);
    Ok(EzSolution {
        tau_low: Some(low),
        big_k_star: Some(big_k),
        m_star: Some(m_star),
        ..finish(p, shape, EzCase::Wait, tb, None, Some(ks), None, false)
    })
}

#[allow(clippy::too_many_arguments)]
fn finish<S: Real>(
    p: &MarketParams<S>,
    shape: Shape<S>,
    case: EzCase,
    tau_bar: S,
    tau_low: Option<S>,
    k_star: Option<S>,
    big_k: Option<S>,
    assumption_failed: bool,
) -> EzSolution<S> {
    let atoms = if shape.atom > S::zero() { vec![(S::zero(), shape.atom)] } else { Vec::new() };
    let plan = ConsumptionPlan { atoms, rate: cell_rates(p, &shape), grid_n: p.grid_n, horizon: p.horizon };
    let grid = p.grid();
    let y = grid.iter().map(|&t| shape.y(t)).collect();
    EzSolution {
        case,
        tau_bar,
        tau_low,
        k_star,
        big_k_star: big_k,
        m_star: None,
        gulp: shape.atom,
        assumption_failed,
        plan,
        y_path: PathSample::new(grid, y),
        shape,
    }
}
