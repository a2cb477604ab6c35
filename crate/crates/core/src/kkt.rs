//! Kuhn–Tucker audit of a candidate plan: budget, `Φ ≤ M`, complementary
//! slackness and connectedness of the support.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{ConsumptionPlan, MarketParams, PathSample};
use crate::paths::{evaluate, Evaluation, GradientPath};
use crate::preferences::FelicitySpec;
use crate::scalar::{lit, one_minus_exp_over, Real};

/// Audit tolerances: relative budget gap, relative `Φ` slack, normalised
/// complementarity gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KktTolerances {
    pub budget: f64,
    pub phi: f64,
    pub comp: f64,
}

impl Default for KktTolerances {
    fn default() -> Self {
        KktTolerances { budget: 1e-6, phi: 1e-4, comp: 1e-6 }
    }
}

/// Which conditions held.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KktChecks {
    pub budget: bool,
    pub overshoot: bool,
    pub complementarity: bool,
    pub flatness: bool,
    pub strict_off_support: bool,
    pub connected_support: bool,
}

impl KktChecks {
    pub fn all(&self) -> bool {
        self.budget
            && self.overshoot
            && self.complementarity
            && self.flatness
            && self.strict_off_support
            && self.connected_support
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport<S> {
    pub multiplier: S,
    /// Grid times with `Φ` within `tol_phi` of the maximum.
    pub argmax: Vec<S>,
    pub budget_gap: S,
    /// Largest `(Φ - M)/M` off the support.
    pub max_overshoot: S,
    /// Largest `(M - Φ)/M` on the support.
    pub support_flatness: S,
    /// Largest `(Φ - M)/M` at grid points at least one cell away from the
    /// support; negative means strictly below the maximum.
    pub off_support_margin: S,
    pub complementarity_gap: S,
    /// Hull of the support; `None` for an empty plan.
    pub support_interval: Option<(S, S)>,
    pub support_connected: bool,
    pub checks: KktChecks,
    pub pass: bool,
    /// Set when the plan could not be evaluated.
    pub inconclusive: Option<String>,
    pub tolerances: KktTolerances,
    pub phi: PathSample<S>,
}

/// `M = max Φ` over the grid and the times where `Φ ≥ M(1 - tol_phi)`.
pub fn extract_multiplier<S: Real>(grad: &GradientPath<S>, tol_phi: S) -> Result<(S, Vec<S>)> {
    let phi = &grad.phi;
    if let Some(k) = phi.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("Φ at t = {:?}", phi.times[k])));
    }
    let m = phi.values.iter().copied().fold(S::neg_infinity(), S::max);
    let cut = m - tol_phi * m.abs();
    let argmax = phi.times.iter().zip(&phi.values).filter(|(_, &v)| v >= cut).map(|(&t, _)| t).collect();
    Ok((m, argmax))
}

/// Support of a discretised plan as closed pieces: active cells and
/// atoms above the mass threshold.
pub fn support_pieces<S: Real>(plan: &ConsumptionPlan<S>, params: &MarketParams<S>) -> Vec<(S, S)> {
    let rate_eps = lit::<S>(1e-10) * params.w / params.horizon;
    let mass_eps = lit::<S>(1e-10) * params.w;
    let mut pieces: Vec<(S, S)> = plan
        .active_cells(rate_eps)
        .into_iter()
        .map(|k| (plan.cell_start(k), plan.cell_start(k + 1)))
        .chain(plan.atoms.iter().filter(|a| a.1 > mass_eps).map(|a| (a.0, a.0)))
        .collect();
    pieces.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    pieces
}

/// Hull of the pieces and whether they form one interval.
fn hull<S: Real>(pieces: &[(S, S)], slack: S) -> (Option<(S, S)>, bool) {
    let Some(first) = pieces.first() else {
        return (None, true);
    };
    let mut end = first.1;
    let mut connected = true;
    for p in &pieces[1..] {
        if p.0 > end + slack {
            connected = false;
        }
        end = end.max(p.1);
    }
    (Some((first.0, end)), connected)
}

/// Full audit at the market price.
pub fn verify_kkt<S: Real>(
    plan: &ConsumptionPlan<S>,
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
    tol: KktTolerances,
) -> Result<KktReport<S>> {
    verify_kkt_scaled(plan, spec, params, tol, S::one())
}

/// Audit against the price `c·e^{-rt}` and wealth `c·w`.
pub fn verify_kkt_scaled<S: Real>(
    plan: &ConsumptionPlan<S>,
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
    tol: KktTolerances,
    price_scale: S,
) -> Result<KktReport<S>> {
    plan.validate()?;
    if !plan.matches(params) {
        return Err(Error::GridMismatch);
    }
    if !(price_scale > S::zero()) {
        return Err(Error::Domain("price scale must be positive".into()));
    }
    match evaluate(plan, spec, params) {
        Ok(e) => audit(plan, &e, params, tol, price_scale),
        Err(err @ (Error::FelicityDomain { .. } | Error::Domain(_) | Error::NonFinite(_))) => {
            Ok(inconclusive(params, tol, err.to_string()))
        }
        Err(err) => Err(err),
    }
}

fn inconclusive<S: Real>(params: &MarketParams<S>, tol: KktTolerances, why: String) -> KktReport<S> {
    let nan = S::nan();
    KktReport {
        multiplier: nan,
        argmax: Vec::new(),
        budget_gap: nan,
        max_overshoot: nan,
        support_flatness: nan,
        off_support_margin: nan,
        complementarity_gap: nan,
        support_interval: None,
        support_connected: false,
        checks: KktChecks::default(),
        pass: false,
        inconclusive: Some(why),
        tolerances: tol,
        phi: PathSample::new(params.grid(), vec![nan; params.grid_n + 1]),
    }
}

/// Audit of an already evaluated plan.
pub fn audit<S: Real>(
    plan: &ConsumptionPlan<S>,
    e: &Evaluation<S>,
    params: &MarketParams<S>,
    tol: KktTolerances,
    price_scale: S,
) -> Result<KktReport<S>> {
    let (tol_budget, tol_phi, tol_comp) = (lit::<S>(tol.budget), lit::<S>(tol.phi), lit::<S>(tol.comp));
    let c = price_scale;
    let n = params.grid_n;
    let h = params.step();
    let grad = &e.gradient;
    let phi_vals: Vec<S> = grad.phi.values.iter().map(|&v| v / c).collect();
    let phi = PathSample::new(grad.phi.times.clone(), phi_vals);
    let scaled = GradientPath { grad: grad.grad.clone(), phi: phi.clone() };
    let (mut m, argmax) = extract_multiplier(&scaled, tol_phi)?;
    let atom_phi: Vec<(S, S, S)> = plan.atoms.iter().map(|&(s, mass)| (s, mass, e.phi_at(s) / c)).collect();
    for &(_, _, p) in &atom_phi {
        m = m.max(p);
    }

    let wealth = c * params.w;
    let spent = c * plan.price_functional(params.r)?;
    let budget_gap = (spent - wealth).abs() / wealth;

    let pieces = support_pieces(plan, params);
    let (support_interval, support_connected) = hull(&pieces, h * lit(1e-9));
    let rate_eps = lit::<S>(1e-10) * params.w / params.horizon;
    let mass_eps = lit::<S>(1e-10) * params.w;

    // grid nodes touched by the support, and their one-cell neighbourhood
    let mut on_support = vec![false; n + 1];
    for (k, &r) in plan.rate.iter().enumerate() {
        if r > rate_eps {
            on_support[k] = true;
            on_support[k + 1] = true;
        }
    }
    for &(s, mass) in &plan.atoms {
        if mass > mass_eps {
            let k = (s / h).floor().to_usize().unwrap_or(0).min(n);
            on_support[k] = true;
            on_support[(k + 1).min(n)] = on_support[(k + 1).min(n)] || s > params.time(k);
        }
    }
    let mut near = on_support.clone();
    for k in 0..=n {
        if on_support[k] {
            near[k.saturating_sub(1)] = true;
            near[(k + 1).min(n)] = true;
        }
    }

    let rel = |v: S| (v - m) / m;
    let mut max_overshoot = S::neg_infinity();
    let mut off_support_margin = S::neg_infinity();
    let mut support_flatness = S::zero();
    for k in 0..=n {
        let d = rel(phi.values[k]);
        if on_support[k] {
            support_flatness = support_flatness.max(-d);
        } else {
            max_overshoot = max_overshoot.max(d);
            if !near[k] {
                off_support_margin = off_support_margin.max(d);
            }
        }
    }
    for &(_, mass, p) in &atom_phi {
        if mass > mass_eps {
            support_flatness = support_flatness.max(-rel(p));
        }
    }
    if max_overshoot == S::neg_infinity() {
        max_overshoot = S::zero();
    }

    // ∫(∇V - Mψ) dC with ψ = c e^{-rt}
    let mut comp = S::zero();
    for (k, &r) in plan.rate.iter().enumerate() {
        if r != S::zero() {
            let (t0, t1) = (params.time(k), params.time(k + 1));
            let ends = grad.grad.values[k] + grad.grad.values[k + 1];
            let grad_part = ends * h * lit(0.5);
            let price_part = m * c * (-params.r * t0).exp() * one_minus_exp_over(params.r, t1 - t0);
            comp = comp + r * (grad_part - price_part);
        }
    }
    for &(s, mass) in &plan.atoms {
        comp = comp + mass * (e.grad_at(s) - m * c * (-params.r * s).exp());
    }
    let complementarity_gap = comp.abs() / (m * wealth);

    let checks = KktChecks {
        budget: budget_gap <= tol_budget,
        overshoot: max_overshoot <= tol_phi,
        complementarity: complementarity_gap <= tol_comp,
        flatness: support_flatness <= tol_phi,
        strict_off_support: off_support_margin < S::zero(),
        connected_support: support_connected,
    };
    Ok(KktReport {
        multiplier: m,
        argmax,
        budget_gap,
        max_overshoot,
        support_flatness,
        off_support_margin,
        complementarity_gap,
        support_interval,
        support_connected,
        checks,
        pass: checks.all(),
        inconclusive: None,
        tolerances: tol,
        phi,
    })
}
