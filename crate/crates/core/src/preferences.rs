//! Felicity (aggregator) functions `f(t, y, u)` with hand-coded partial
//! derivatives, the composite operator `𝔏f`, and parameter validation.
//!
//! Every aggregator also exposes an *ordinal normal form*: an increasing
//! reparametrisation `u = Λ(v)` under which the utility solves the
//! better-behaved equation `dv/dt = -g(t, Y_t, v_t)`. For the time-additive
//! family `Λ` is the identity. For Epstein–Zin, `v` is the discounted power
//! aggregate, which keeps the backward equation Lipschitz at the terminal
//! condition where `f` itself is not.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::MarketParams;
use crate::scalar::{lit, Real};

/// Default floor applied to satisfaction levels before evaluation.
pub const Y_FLOOR: f64 = 1e-12;

/// An intertemporal aggregator.
///
/// Methods return `NaN` outside the aggregator's domain; [`FelicitySpec`]
/// turns that into [`Error::FelicityDomain`].
pub trait Aggregator<S: Real>: Send + Sync + fmt::Debug {
    fn f(&self, t: S, y: S, u: S) -> S;
    fn f_y(&self, t: S, y: S, u: S) -> S;
    fn f_u(&self, t: S, y: S, u: S) -> S;
    fn f_yy(&self, t: S, y: S, u: S) -> S;
    fn f_ty(&self, t: S, y: S, u: S) -> S;
    fn f_uy(&self, t: S, y: S, u: S) -> S;

    /// Generator in normal coordinates.
    fn g(&self, t: S, y: S, v: S) -> S {
        self.f(t, y, v)
    }
    fn g_y(&self, t: S, y: S, v: S) -> S {
        self.f_y(t, y, v)
    }
    fn g_v(&self, t: S, y: S, v: S) -> S {
        self.f_u(t, y, v)
    }
    /// `Λ(v)`.
    fn u_of_v(&self, v: S) -> S {
        v
    }
    /// `Λ^{-1}(u)`.
    fn v_of_u(&self, u: S) -> S {
        u
    }
    /// `ln Λ'(v)`.
    fn ln_dlambda(&self, _v: S) -> S {
        S::zero()
    }
    /// Normal coordinate of the terminal condition `U_T = 0`.
    fn terminal_v(&self) -> S {
        S::zero()
    }
    /// Describes the admissible domain, used in error messages.
    fn domain(&self) -> &'static str {
        "y > 0"
    }
}

/// Epstein–Zin parameters: time preference `delta`, relative risk aversion
/// `rho` and elasticity of intertemporal substitution `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EzParams<S> {
    pub delta: S,
    pub rho: S,
    pub alpha: S,
}

impl<S: Real> EzParams<S> {
    pub fn new(delta: S, rho: S, alpha: S) -> Self {
        EzParams { delta, rho, alpha }
    }

    /// The EZ exponent `(1-ρ)/(1-1/α)`.
    pub fn psi(&self) -> S {
        (S::one() - self.rho) / (S::one() - self.alpha.recip())
    }

    /// `1 - 1/α`, the power applied to satisfaction.
    pub fn power(&self) -> S {
        S::one() - self.alpha.recip()
    }

    pub fn with_rho(mut self, rho: S) -> Self {
        self.rho = rho;
        self
    }
}

/// Lists every violated admissibility constraint; empty means admissible.
pub fn validate<S: Real>(p: &EzParams<S>, m: &MarketParams<S>) -> Vec<String> {
    let mut v = Vec::new();
    if !(p.delta >= S::zero()) {
        v.push("δ ≥ 0".to_string());
    }
    if !(p.rho > S::zero()) {
        v.push("ρ > 0".to_string());
    }
    if p.rho == S::one() {
        v.push("ρ ≠ 1".to_string());
    }
    if !(p.alpha > S::zero()) {
        v.push("α > 0".to_string());
    }
    if p.alpha == S::one() {
        v.push("α ≠ 1".to_string());
    }
    if p.alpha > S::zero() && !(p.rho < p.alpha.recip()) {
        v.push("ρ < 1/α".to_string());
    }
    if p.alpha > S::zero() && !(m.r + m.beta / p.alpha - p.delta > S::zero()) {
        v.push("r + β/α − δ > 0".to_string());
    }
    v
}

#[derive(Debug, Clone, Copy)]
struct EpsteinZin<S> {
    delta: S,
    rho: S,
    alpha: S,
    a: S,
    psi: S,
    q: S,
}

impl<S: Real> EpsteinZin<S> {
    fn new(p: EzParams<S>) -> Self {
        let a = p.power();
        let psi = p.psi();
        EpsteinZin { delta: p.delta, rho: p.rho, alpha: p.alpha, a, psi, q: S::one() - psi.recip() }
    }

    /// `(1-ρ)u`, NaN when not positive.
    fn base(&self, u: S) -> S {
        let b = (S::one() - self.rho) * u;
        if b > S::zero() {
            b
        } else {
            S::nan()
        }
    }
}

impl<S: Real> Aggregator<S> for EpsteinZin<S> {
    fn f(&self, _t: S, y: S, u: S) -> S {
        if self.delta == S::zero() {
            return S::zero();
        }
        let b = self.base(u);
        self.delta / self.a * y.powf(self.a) * b.powf(self.q) - self.delta * self.psi * u
    }
    fn f_y(&self, _t: S, y: S, u: S) -> S {
        if self.delta == S::zero() {
            return S::zero();
        }
        self.delta * y.powf(-self.alpha.recip()) * self.base(u).powf(self.q)
    }
    fn f_u(&self, _t: S, y: S, u: S) -> S {
        if self.delta == S::zero() {
            return S::zero();
        }
        let b = self.base(u);
        self.delta / self.a * y.powf(self.a) * self.q * (S::one() - self.rho) * b.powf(self.q - S::one())
            - self.delta * self.psi
    }
    fn f_yy(&self, _t: S, y: S, u: S) -> S {
        if self.delta == S::zero() {
            return S::zero();
        }
        -self.delta / self.alpha * y.powf(-self.alpha.recip() - S::one()) * self.base(u).powf(self.q)
    }
    fn f_ty(&self, _t: S, _y: S, _u: S) -> S {
        S::zero()
    }
    fn f_uy(&self, _t: S, y: S, u: S) -> S {
        if self.delta == S::zero() {
            return S::zero();
        }
        let b = self.base(u);
        self.delta * y.powf(-self.alpha.recip()) * self.q * (S::one() - self.rho) * b.powf(self.q - S::one())
    }

    fn g(&self, _t: S, y: S, v: S) -> S {
        self.delta * (y.powf(self.a) / self.a - v)
    }
    fn g_y(&self, _t: S, y: S, _v: S) -> S {
        self.delta * y.powf(-self.alpha.recip())
    }
    fn g_v(&self, _t: S, _y: S, _v: S) -> S {
        -self.delta
    }
    fn u_of_v(&self, v: S) -> S {
        (self.a * v).powf(self.psi) / (S::one() - self.rho)
    }
    fn v_of_u(&self, u: S) -> S {
        self.base(u).powf(self.psi.recip()) / self.a
    }
    fn ln_dlambda(&self, v: S) -> S {
        (self.psi - S::one()) * (self.a * v).ln()
    }
    fn domain(&self) -> &'static str {
        "y > 0 and (1-ρ)u > 0"
    }
}

type ScalarFn<S> = Arc<dyn Fn(S) -> S + Send + Sync>;

/// `f(t, y, u) = g(y) - δu`.
#[derive(Clone)]
struct TimeAdditive<S> {
    g: ScalarFn<S>,
    g1: ScalarFn<S>,
    g2: ScalarFn<S>,
    delta: S,
}

impl<S: Real> fmt::Debug for TimeAdditive<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeAdditive").field("delta", &self.delta).finish_non_exhaustive()
    }
}

impl<S: Real> Aggregator<S> for TimeAdditive<S> {
    fn f(&self, _t: S, y: S, u: S) -> S {
        (self.g)(y) - self.delta * u
    }
    fn f_y(&self, _t: S, y: S, _u: S) -> S {
        (self.g1)(y)
    }
    fn f_u(&self, _t: S, _y: S, _u: S) -> S {
        -self.delta
    }
    fn f_yy(&self, _t: S, y: S, _u: S) -> S {
        (self.g2)(y)
    }
    fn f_ty(&self, _t: S, _y: S, _u: S) -> S {
        S::zero()
    }
    fn f_uy(&self, _t: S, _y: S, _u: S) -> S {
        S::zero()
    }
}

/// Which built-in family a [`FelicitySpec`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "felicity", deny_unknown_fields)]
pub enum FelicityChoice<S> {
    #[serde(rename = "epstein-zin")]
    EpsteinZin { delta: S, rho: S, alpha: S },
    /// `g(y) = y^p / p`.
    #[serde(rename = "time-additive-power")]
    TimeAdditivePower { exponent: S, delta: S },
}

impl<S: Real> FelicityChoice<S> {
    pub fn build(&self) -> Result<FelicitySpec<S>> {
        match *self {
            FelicityChoice::EpsteinZin { delta, rho, alpha } => Ok(ez_felicity(EzParams { delta, rho, alpha })),
            FelicityChoice::TimeAdditivePower { exponent, delta } => power_felicity(exponent, delta),
        }
    }

    pub fn ez_params(&self) -> Option<EzParams<S>> {
        match *self {
            FelicityChoice::EpsteinZin { delta, rho, alpha } => Some(EzParams { delta, rho, alpha }),
            _ => None,
        }
    }
}

/// Parameter record attached to a spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FelicityParams<S> {
    EpsteinZin(EzParams<S>),
    TimeAdditive { delta: S },
    TimeAdditivePower { exponent: S, delta: S },
    Custom,
}

/// An immutable, shareable felicity function with its derivatives.
#[derive(Clone)]
pub struct FelicitySpec<S> {
    label: String,
    params: FelicityParams<S>,
    inner: Arc<dyn Aggregator<S>>,
    /// Declared Lipschitz bound of the generator in its normal coordinate.
    lipschitz: S,
    y_floor: S,
    clamps: Arc<AtomicU64>,
}

impl<S: Real> fmt::Debug for FelicitySpec<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FelicitySpec")
            .field("label", &self.label)
            .field("params", &self.params)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

macro_rules! checked {
    ($name:ident, $method:ident) => {
        pub fn $name(&self, t: S, y: S, u: S) -> Result<S> {
            let y = self.clamp_y(y)?;
            self.check(t, self.inner.$method(t, y, u))
        }
    };
}

impl<S: Real> FelicitySpec<S> {
    /// Wraps a user-supplied aggregator.
    pub fn custom(label: impl Into<String>, aggregator: Arc<dyn Aggregator<S>>, lipschitz: S) -> Self {
        Self::from_parts(label.into(), FelicityParams::Custom, aggregator, lipschitz)
    }

    fn from_parts(label: String, params: FelicityParams<S>, inner: Arc<dyn Aggregator<S>>, lipschitz: S) -> Self {
        FelicitySpec { label, params, inner, lipschitz, y_floor: lit(Y_FLOOR), clamps: Arc::new(AtomicU64::new(0)) }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn params(&self) -> FelicityParams<S> {
        self.params
    }

    pub fn lipschitz(&self) -> S {
        self.lipschitz
    }

    pub fn aggregator(&self) -> &dyn Aggregator<S> {
        self.inner.as_ref()
    }

    /// Number of evaluations whose satisfaction argument hit the floor.
    pub fn clamp_count(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }

    /// Applies the working-domain floor to `y`.
    pub fn clamp_y(&self, y: S) -> Result<S> {
        if y.is_nan() {
            return Err(Error::Domain("satisfaction level is NaN".into()));
        }
        if y < self.y_floor {
            if self.clamps.fetch_add(1, Ordering::Relaxed) == 0 {
                log::warn!("satisfaction {y:?} below floor, clamped to {:?}", self.y_floor);
            }
            Ok(self.y_floor)
        } else {
            Ok(y)
        }
    }

    fn check(&self, t: S, v: S) -> Result<S> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::FelicityDomain {
                t: t.to_f64().unwrap_or(f64::NAN),
                what: format!("{} requires {}", self.label, self.inner.domain()),
            })
        }
    }

    checked!(f, f);
    checked!(f_y, f_y);
    checked!(f_u, f_u);
    checked!(f_yy, f_yy);
    checked!(f_ty, f_ty);
    checked!(f_uy, f_uy);

    /// Generator in normal coordinates, with the floor applied.
    pub fn g(&self, t: S, y: S, v: S) -> Result<S> {
        let y = self.clamp_y(y)?;
        self.check(t, self.inner.g(t, y, v))
    }

    pub fn g_y(&self, t: S, y: S, v: S) -> Result<S> {
        let y = self.clamp_y(y)?;
        self.check(t, self.inner.g_y(t, y, v))
    }

    pub fn g_v(&self, t: S, y: S, v: S) -> Result<S> {
        let y = self.clamp_y(y)?;
        self.check(t, self.inner.g_v(t, y, v))
    }

    pub fn u_of_v(&self, v: S) -> S {
        self.inner.u_of_v(v)
    }

    pub fn v_of_u(&self, u: S) -> S {
        self.inner.v_of_u(u)
    }

    pub fn ln_dlambda(&self, v: S) -> S {
        self.inner.ln_dlambda(v)
    }

    pub fn terminal_v(&self) -> S {
        self.inner.terminal_v()
    }
}

/// Epstein–Zin felicity
/// `f = δ/(1-1/α)·y^{1-1/α}·((1-ρ)u)^{1-1/ψ} - δψu`.
pub fn ez_felicity<S: Real>(p: EzParams<S>) -> FelicitySpec<S> {
    let label = format!("epstein-zin(δ={:?}, ρ={:?}, α={:?})", p.delta, p.rho, p.alpha);
    FelicitySpec::from_parts(label, FelicityParams::EpsteinZin(p), Arc::new(EpsteinZin::new(p)), p.delta)
}

/// `f(t, y, u) = g(y) - δu` from `g`, `g'` and `g''`.
pub fn time_additive_felicity<S, G, G1, G2>(g: G, g1: G1, g2: G2, delta: S) -> FelicitySpec<S>
where
    S: Real,
    G: Fn(S) -> S + Send + Sync + 'static,
    G1: Fn(S) -> S + Send + Sync + 'static,
    G2: Fn(S) -> S + Send + Sync + 'static,
{
    let inner = TimeAdditive { g: Arc::new(g), g1: Arc::new(g1), g2: Arc::new(g2), delta };
    FelicitySpec::from_parts(
        format!("time-additive(δ={delta:?})"),
        FelicityParams::TimeAdditive { delta },
        Arc::new(inner),
        delta.abs(),
    )
}

/// Time-additive power felicity with `g(y) = y^p / p`, `p < 1`, `p ≠ 0`.
pub fn power_felicity<S: Real>(exponent: S, delta: S) -> Result<FelicitySpec<S>> {
    if !(exponent < S::one()) || exponent == S::zero() || !exponent.is_finite() {
        return Err(Error::InvalidParams(vec!["power exponent p must satisfy p < 1, p ≠ 0".into()]));
    }
    if !(delta >= S::zero()) {
        return Err(Error::InvalidParams(vec!["δ ≥ 0".into()]));
    }
    let p = exponent;
    let mut spec = time_additive_felicity(
        move |y: S| y.powf(p) / p,
        move |y: S| y.powf(p - S::one()),
        move |y: S| (p - S::one()) * y.powf(p - lit(2.0)),
        delta,
    );
    spec.label = format!("time-additive-power(p={p:?}, δ={delta:?})");
    spec.params = FelicityParams::TimeAdditivePower { exponent, delta };
    Ok(spec)
}

/// `𝔏f = r∂_y f + ∂_u f·∂_y f + ∂_{ty} f − βy·∂²_y f − f·∂_{uy} f`.
pub fn l_operator<S: Real>(spec: &FelicitySpec<S>, params: &MarketParams<S>, t: S, y: S, u: S) -> Result<S> {
    let fy = spec.f_y(t, y, u)?;
    let y = spec.clamp_y(y)?;
    Ok(params.r * fy + spec.f_u(t, y, u)? * fy + spec.f_ty(t, y, u)?
        - params.beta * y * spec.f_yy(t, y, u)?
        - spec.f(t, y, u)? * spec.f_uy(t, y, u)?)
}
