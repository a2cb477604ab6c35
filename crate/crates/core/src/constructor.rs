//! Optimal plans for general admissible felicities: Picard iteration for a
//! fixed multiplier `M`, then a bracketed search on `M` for the budget.
//!
//! On the consumption interval the first-order identity
//! `(r+β)M = β e^{rt} E_t ∂_y f(t, I_t, U_t)` pins the satisfaction level
//! `I_t`; the interval ends where stopping consumption makes `Φ` fall to `M`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kkt::{verify_kkt, KktReport, KktTolerances};
use crate::market::{ConsumptionPlan, MarketParams, PathSample};
use crate::numerics::roots::{expand_positive, solve as find_root, Tolerance};
use crate::paths::{evaluate, Evaluation};
use crate::preferences::{l_operator, FelicitySpec};
use crate::scalar::{from_usize, lit, Real};

/// `(dY/dt, rate)` on the consumption interval:
/// `dY/dt = -(𝔏f + βY∂²_y f)/∂²_y f`, `rate = Y + (dY/dt)/β`.
pub fn rate_ode_rhs<S: Real>(spec: &FelicitySpec<S>, params: &MarketParams<S>, t: S, y: S, u: S) -> Result<(S, S)> {
    let fyy = spec.f_yy(t, y, u)?;
    if fyy == S::zero() {
        return Err(Error::Singular { t: t.to_f64().unwrap_or(f64::NAN), what: "∂²_y f = 0".into() });
    }
    let l = l_operator(spec, params, t, y, u)?;
    let dy = -(l + params.beta * y * fyy) / fyy;
    Ok((dy, y + dy / params.beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstructorOptions {
    /// Picard iteration cap per multiplier.
    pub max_iter: usize,
    /// Stop when successive utilities differ by less than this in sup norm.
    pub tol: f64,
    /// Coarse scan points used to bracket the end of consumption.
    pub scan_points: usize,
    /// Relative tolerance on `M` in the outer search.
    pub multiplier_rel_tol: f64,
    pub kkt: KktTolerances,
}

impl Default for ConstructorOptions {
    fn default() -> Self {
        ConstructorOptions { max_iter: 200, tol: 1e-12, scan_points: 64, multiplier_rel_tol: 1e-13, kkt: KktTolerances::default() }
    }
}

/// One Picard iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate<S> {
    pub n: usize,
    pub t0: S,
    pub t1: S,
    /// Sup-norm change of `U` against the previous iterate.
    pub delta: S,
    /// `Φ⁽ⁿ⁾ - M` changed sign more than once on the coarse scan.
    pub multiple_roots: bool,
    /// Cells whose implied rate was negative and clamped to zero.
    pub clamped: usize,
    pub y: PathSample<S>,
    pub u: PathSample<S>,
    pub plan: ConsumptionPlan<S>,
}

/// Diagnostic line per iterate, without the paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord<S> {
    pub n: usize,
    pub t0: S,
    pub t1: S,
    pub delta: S,
    pub multiple_roots: bool,
    pub clamped: usize,
}

impl<S: Real> Iterate<S> {
    pub fn record(&self) -> IterationRecord<S> {
        IterationRecord {
            n: self.n,
            t0: self.t0,
            t1: self.t1,
            delta: self.delta,
            multiple_roots: self.multiple_roots,
            clamped: self.clamped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripleSolution<S> {
    #[serde(rename = "M")]
    pub m: S,
    pub t0: S,
    pub t1: S,
    pub plan: ConsumptionPlan<S>,
    pub y_path: PathSample<S>,
    pub u_path: PathSample<S>,
    pub phi_path: PathSample<S>,
    /// `Φ ≈ M` on `[t0, t1]` and `Φ ≤ M` elsewhere, on the grid.
    pub verified: bool,
    pub budget: S,
    pub iterations: Vec<IterationRecord<S>>,
    /// Outer-search evaluations `(M, budget(M))` in call order.
    pub budget_trace: Vec<(S, S)>,
    /// Pairs in the trace where a larger `M` bought more.
    pub monotonicity_violations: usize,
    pub kkt: Option<KktReport<S>>,
}

struct Step<S> {
    plan: ConsumptionPlan<S>,
    t0: S,
    t1: S,
    multiple_roots: bool,
    clamped: usize,
    y: Vec<S>,
}

/// Solves `∂_y g(t, I, v) = target` for `I > 0`.
fn invert_marginal<S: Real>(spec: &FelicitySpec<S>, t: S, v: S, target: S, start: S) -> Result<S> {
    let ln_target = target.ln();
    let f = |y: S| spec.g_y(t, y, v).map(|g| g.ln() - ln_target).unwrap_or_else(|_| S::nan());
    let bracket = match expand_positive(f, start, lit(2.0), 400) {
        Ok(b) => b,
        // marginal utility stays below target down to the satisfaction floor
        Err(Error::NoBracket { .. }) if f(start) < S::zero() => return Ok(S::min_positive_value()),
        Err(e) => return Err(e),
    };
    let tol = Tolerance { x_abs: S::zero(), x_rel: S::epsilon() * lit(4.0), max_iter: 300 };
    find_root(f, bracket, tol)
}

fn picard_step<S: Real>(
    spec: &FelicitySpec<S>,
    p: &MarketParams<S>,
    m: S,
    prev: &Evaluation<S>,
    scan_points: usize,
) -> Result<Step<S>> {
    let n = p.grid_n;
    let h = p.step();
    let beta = p.beta;
    let grid = p.grid();
    let y_prev = &prev.satisfaction.sample.values;
    let v = &prev.utility.v.values;
    let free: Vec<S> = grid.iter().map(|&t| p.y * (-beta * t).exp()).collect();

    // ln E_t = ln Λ'(v_0) + ∫_0^t ∂_v g
    let gv = (0..=n).map(|k| spec.g_v(grid[k], y_prev[k], v[k])).collect::<Result<Vec<_>>>()?;
    let ln_l0 = spec.ln_dlambda(v[0]);
    let mut ln_e = vec![ln_l0; n + 1];
    for k in 1..=n {
        ln_e[k] = ln_e[k - 1] + (gv[k - 1] + gv[k]) * h * lit(0.5);
    }
    let scale = m * (p.r + beta) / beta;
    let inv: Vec<S> = (0..=n)
        .into_par_iter()
        .map(|k| {
            let target = scale * (-p.r * grid[k] - ln_e[k]).exp();
            invert_marginal(spec, grid[k], v[k], target, free[k])
        })
        .collect::<Result<Vec<_>>>()?;

    // Φ⁽ⁿ⁾ at node k: value of stopping at t_k with satisfaction I_k
    let phi_n = |k: usize| -> Result<S> {
        let mut acc = S::zero();
        let mut last = S::zero();
        for j in k..=n {
            let y = inv[k] * (-beta * (grid[j] - grid[k])).exp();
            let val = (ln_e[j] + (p.r + beta) * grid[k] - beta * grid[j]).exp() * spec.g_y(grid[j], y, v[j])?;
            if j > k {
                acc = acc + (last + val) * h * lit(0.5);
            }
            last = val;
        }
        Ok(beta * acc)
    };
    let gap = |k: usize| phi_n(k).map(|phi| phi - m);

    let mut coarse: Vec<usize> = (0..=scan_points).map(|i| (i * n + scan_points / 2) / scan_points).collect();
    coarse.dedup();
    let values = coarse.iter().map(|&k| gap(k)).collect::<Result<Vec<_>>>()?;
    let sign_changes = values.windows(2).filter(|w| (w[0] > S::zero()) != (w[1] > S::zero())).count();
    let multiple_roots = sign_changes > 1;
    let last_positive = values.iter().rposition(|&g| g > S::zero());
    let (t1, y_t1) = match last_positive {
        None => (S::zero(), inv[0]),
        Some(i) if i + 1 == coarse.len() => (p.horizon, inv[n]),
        Some(i) => {
            let (mut lo, mut hi) = (coarse[i], coarse[i + 1]);
            let (mut g_lo, mut g_hi) = (values[i], values[i + 1]);
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                let g = gap(mid)?;
                if g > S::zero() {
                    lo = mid;
                    g_lo = g;
                } else {
                    hi = mid;
                    g_hi = g;
                }
            }
            let lam = g_lo / (g_lo - g_hi);
            let t1 = grid[lo] + h * lam;
            let y_t1 = (inv[lo].ln() + (inv[hi].ln() - inv[lo].ln()) * lam).exp();
            (t1, y_t1)
        }
    };

    let top = y_t1.max(p.y * (-beta * t1).exp());
    let y: Vec<S> = (0..=n)
        .map(|k| if grid[k] <= t1 { free[k].max(inv[k]) } else { top * (-beta * (grid[k] - t1)).exp() })
        .collect();

    let t_hat = (0..=n).find(|&k| inv[k] >= free[k]).map(|k| {
        if k == 0 {
            S::zero()
        } else {
            let (d0, d1) = (inv[k - 1] - free[k - 1], inv[k] - free[k]);
            grid[k - 1] + h * d0 / (d0 - d1)
        }
    });
    let t0 = t_hat.map_or(t1, |t| t.min(t1));

    let atom = (y[0] - p.y) / beta;
    let decay = (-beta * h).exp();
    let floor = lit::<S>(1e-12) * p.w / p.horizon;
    let mut clamped = 0;
    let rate: Vec<S> = (0..n)
        .map(|k| {
            if grid[k] >= t1 || grid[k + 1] <= t0 {
                return S::zero();
            }
            let c = (y[k + 1] - y[k] * decay) / (S::one() - decay);
            if c < S::zero() {
                if c < -floor {
                    clamped += 1;
                }
                S::zero()
            } else {
                c
            }
        })
        .collect();
    let atoms = if atom > S::zero() { vec![(S::zero(), atom)] } else { Vec::new() };
    let plan = ConsumptionPlan::new(p.horizon, n, atoms, rate)?;
    Ok(Step { plan, t0, t1, multiple_roots, clamped, y })
}

fn run_picard<S: Real>(
    spec: &FelicitySpec<S>,
    p: &MarketParams<S>,
    m: S,
    start: Evaluation<S>,
    max_n: usize,
    tol: S,
    scan_points: usize,
    keep_paths: bool,
) -> Result<(Vec<Iterate<S>>, Evaluation<S>, bool)> {
    if !(m > S::zero()) {
        return Err(Error::Domain(format!("multiplier must be positive, got {m:?}")));
    }
    let mut prev = start;
    let mut out = Vec::new();
    let mut converged = false;
    for n in 1..=max_n {
        let step = picard_step(spec, p, m, &prev, scan_points)?;
        let e = evaluate(&step.plan, spec, p)?;
        let delta = e.utility.u.sup_distance(&prev.utility.u);
        log::debug!("picard n={n} t0={:?} t1={:?} delta={delta:?}", step.t0, step.t1);
        let (y, u, plan) = if keep_paths || delta < tol || n == max_n {
            (PathSample::new(p.grid(), step.y), e.utility.u.clone(), step.plan)
        } else {
            (PathSample::new(Vec::new(), Vec::new()), PathSample::new(Vec::new(), Vec::new()), step.plan)
        };
        out.push(Iterate {
            n,
            t0: step.t0,
            t1: step.t1,
            delta,
            multiple_roots: step.multiple_roots,
            clamped: step.clamped,
            y,
            u,
            plan,
        });
        prev = e;
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok((out, prev, converged))
}

/// Picard iterates for a fixed multiplier, started from the zero plan.
/// Stops at the first iterate whose utility moved less than `tol`.
pub fn picard_iterate<S: Real>(
    spec: &FelicitySpec<S>,
    p: &MarketParams<S>,
    m: S,
    max_n: usize,
    tol: S,
) -> Result<Vec<Iterate<S>>> {
    let start = evaluate(&ConsumptionPlan::empty_for(p), spec, p)?;
    let scan = ConstructorOptions::default().scan_points;
    Ok(run_picard(spec, p, m, start, max_n, tol, scan, true)?.0)
}

fn verified<S: Real>(e: &Evaluation<S>, m: S, t0: S, t1: S, h: S, tol_phi: S) -> bool {
    let phi = &e.gradient.phi;
    phi.times.iter().zip(&phi.values).all(|(&t, &v)| {
        let inside = t >= t0 + h && t <= t1 - h;
        let near = t > t0 - h && t < t1 + h;
        if inside {
            ((v - m) / m).abs() <= tol_phi
        } else if near {
            v <= m * (S::one() + tol_phi)
        } else {
            v < m * (S::one() + tol_phi)
        }
    })
}

fn triple<S: Real>(
    spec: &FelicitySpec<S>,
    p: &MarketParams<S>,
    m: S,
    iterates: Vec<Iterate<S>>,
    e: Evaluation<S>,
    opts: &ConstructorOptions,
) -> Result<TripleSolution<S>> {
    let last = iterates.last().expect("at least one iterate");
    let plan = last.plan.clone();
    let budget = plan.price_functional(p.r)?;
    let ok = verified(&e, m, last.t0, last.t1, p.step(), lit(opts.kkt.phi));
    let kkt = verify_kkt(&plan, spec, p, opts.kkt)?;
    Ok(TripleSolution {
        m,
        t0: last.t0,
        t1: last.t1,
        plan,
        y_path: e.satisfaction.sample.clone(),
        u_path: e.utility.u.clone(),
        phi_path: e.gradient.phi.clone(),
        verified: ok,
        budget,
        iterations: iterates.iter().map(Iterate::record).collect(),
        budget_trace: Vec::new(),
        monotonicity_violations: 0,
        kkt: Some(kkt),
    })
}

/// Fixed-multiplier triple `(t0, t1, C^M)`.
pub fn solve_for_multiplier<S: Real>(
    spec: &FelicitySpec<S>,
    p: &MarketParams<S>,
    m: S,
    opts: &ConstructorOptions,
) -> Result<TripleSolution<S>> {
    let start = evaluate(&ConsumptionPlan::empty_for(p), spec, p)?;
    let (iterates, e, converged) = run_picard(spec, p, m, start, opts.max_iter, lit(opts.tol), opts.scan_points, false)?;
    if !converged {
        let last_delta = iterates.last().map_or(f64::NAN, |i| i.delta.to_f64().unwrap_or(f64::NAN));
        return Err(Error::NoFixedPoint { iterations: iterates.len(), last_delta });
    }
    triple(spec, p, m, iterates, e, opts)
}

/// Budget-exact optimal plan: outer search on `M` with
/// `budget(M) = ∫e^{-rt}dC^M` nonincreasing in `M`.
pub fn solve<S: Real>(spec: &FelicitySpec<S>, p: &MarketParams<S>, opts: &ConstructorOptions) -> Result<TripleSolution<S>> {
    p.validate()?;
    let zero = evaluate(&ConsumptionPlan::empty_for(p), spec, p)?;
    let m0 = zero.gradient.phi.values.iter().copied().fold(S::zero(), S::max);
    if !(m0 > S::zero()) {
        return Err(Error::Domain("marginal utility of the zero plan is not positive".into()));
    }
    let tol = lit::<S>(opts.tol);
    let mut warm = zero.clone();
    let mut trace: Vec<(S, S)> = Vec::new();
    let mut failure: Option<Error> = None;
    let mut budget = |m: S| -> S {
        match run_picard(spec, p, m, warm.clone(), opts.max_iter, tol, opts.scan_points, false) {
            Ok((its, e, true)) => {
                let spent = its.last().unwrap().plan.price_functional(p.r).unwrap_or_else(|_| S::nan());
                warm = e;
                trace.push((m, spent));
                spent - p.w
            }
            Ok((its, _, false)) => {
                let last_delta = its.last().map_or(f64::NAN, |i| i.delta.to_f64().unwrap_or(f64::NAN));
                failure.get_or_insert(Error::NoFixedPoint { iterations: its.len(), last_delta });
                S::nan()
            }
            Err(err) => {
                failure.get_or_insert(err);
                S::nan()
            }
        }
    };
    let bracket = match expand_positive(&mut budget, m0, lit(2.0), 80) {
        Ok(b) => b,
        Err(Error::NoBracket { trace }) => {
            if let Some(err) = failure {
                return Err(err);
            }
            log::warn!("budget(M) never reached w; the immediate-consumption regime may apply");
            return Err(Error::NoBracket { trace });
        }
        Err(err) => return Err(err),
    };
    let root_tol = Tolerance { x_abs: S::zero(), x_rel: lit(opts.multiplier_rel_tol), max_iter: 200 };
    let m_star = find_root(&mut budget, bracket, root_tol);
    let m_star = match (m_star, failure) {
        (Ok(m), _) => m,
        (Err(_), Some(err)) | (Err(err), None) => return Err(err),
    };

    let (iterates, e, converged) = run_picard(spec, p, m_star, warm, opts.max_iter, tol, opts.scan_points, false)?;
    if !converged {
        let last_delta = iterates.last().map_or(f64::NAN, |i| i.delta.to_f64().unwrap_or(f64::NAN));
        return Err(Error::NoFixedPoint { iterations: iterates.len(), last_delta });
    }
    let mut sol = triple(spec, p, m_star, iterates, e, opts)?;
    let mut sorted = trace.clone();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let slack = lit::<S>(1e-9) * p.w;
    sol.monotonicity_violations = sorted.windows(2).filter(|w| w[1].1 > w[0].1 + slack).count();
    if sol.monotonicity_violations > 0 {
        log::warn!("budget(M) increased with M at {} trace points", sol.monotonicity_violations);
    }
    sol.budget_trace = trace;
    Ok(sol)
}

/// Number of grid cells between two times, for comparisons at grid
/// resolution.
pub fn cells_between<S: Real>(p: &MarketParams<S>, a: S, b: S) -> S {
    (a - b).abs() / p.horizon * from_usize(p.grid_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preferences::{ez_felicity, power_felicity, EzParams};

    fn market(n: usize) -> MarketParams<f64> {
        MarketParams::new(1.0, 0.05, 1.0, 1.0, 1.0, n).unwrap()
    }

    #[test]
    fn ez_rhs_decays_log_linearly() {
        let p = market(10);
        let ez = EzParams::new(0.1, 0.3, 1.5);
        let spec = ez_felicity(ez);
        for (y, u) in [(1.0, 0.4), (0.7, 0.2), (2.0, 1.0)] {
            let (dy, rate) = rate_ode_rhs(&spec, &p, 0.3, y, u).unwrap();
            let gamma = ez.alpha * (ez.delta - p.r);
            assert!((dy + gamma * y).abs() < 1e-12 * y);
            assert!((rate - y * (1.0 - gamma / p.beta)).abs() < 1e-12);
        }
    }

    #[test]
    fn sqrt_rhs_spot_value() {
        // 𝔏f = 0.225, g'' = -1/4 at Y = 1, β = 1
        let p = market(10);
        let spec = power_felicity(0.5, 0.1).unwrap();
        let (dy, rate) = rate_ode_rhs(&spec, &p, 0.0, 1.0, 0.0).unwrap();
        assert!((rate - 0.9).abs() < 1e-12);
        assert!((dy - (-0.1)).abs() < 1e-12);
    }

    #[test]
    fn linear_felicity_is_singular() {
        let p = market(10);
        let spec = crate::preferences::time_additive_felicity(|y: f64| y, |_| 1.0, |_| 0.0, 0.1);
        assert!(matches!(rate_ode_rhs(&spec, &p, 0.0, 1.0, 0.0), Err(Error::Singular { .. })));
    }

    #[test]
    fn huge_multiplier_consumes_nothing() {
        let p = market(100);
        let spec = power_felicity(0.5, 0.1).unwrap();
        let s = solve_for_multiplier(&spec, &p, 1e6, &ConstructorOptions::default()).unwrap();
        assert_eq!(s.plan.total(), 0.0);
        assert_eq!(s.t0, s.t1);
        assert!(s.phi_path.values.iter().all(|&v| v < 1e6));
        assert!(s.verified);
    }

    #[test]
    fn additive_felicity_converges_at_second_iterate() {
        let p = market(100);
        let spec = power_felicity(0.5, 0.0).unwrap();
        let its = picard_iterate(&spec, &p, 0.5, 10, 1e-14).unwrap();
        assert_eq!(its.len(), 2);
        assert_eq!(its[1].delta, 0.0);
        assert_eq!(its[1].u, its[0].u);
    }

    #[test]
    fn budget_is_met() {
        let p = market(200);
        let spec = power_felicity(0.5, 0.1).unwrap();
        let s = solve(&spec, &p, &ConstructorOptions::default()).unwrap();
        assert!((s.budget - 1.0).abs() < 1e-9);
        assert!(s.verified);
        assert_eq!(s.monotonicity_violations, 0);
        assert!(s.plan.atoms.iter().all(|a| a.0 == 0.0));
    }
}
