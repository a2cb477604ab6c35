//! Satisfaction paths `Y^C`, the backward utility equation and the utility
//! gradient `∇V(C)` for the exponential memory kernel
//! `Y_t = y e^{-βt} + β∫_0^t e^{-β(t-s)} dC_s`.
//!
//! Everything lives on one mesh: the uniform grid plus every atom time.
//! `Y` jumps at atoms, so each mesh node carries a left and a right limit.

use crate::error::{Error, Result};
use crate::market::{ConsumptionPlan, MarketParams, PathSample};
use crate::preferences::FelicitySpec;
use crate::scalar::{from_usize, lit, one_minus_exp_over, Real};

/// Which one-sided limit to take at a jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Closed-form evaluator of `Y_t` for a plan (atoms + cell rates).
#[derive(Debug, Clone)]
pub struct SatisfactionKernel<S> {
    beta: S,
    horizon: S,
    h: S,
    rate: Vec<S>,
    node_left: Vec<S>,
    node_right: Vec<S>,
    /// Atoms strictly inside each cell, sorted by time.
    interior: Vec<Vec<(S, S)>>,
}

impl<S: Real> SatisfactionKernel<S> {
    /// Builds the kernel; atoms may carry signed masses (used for
    /// directional derivatives), rates must match the grid.
    pub fn new(y0: S, beta: S, horizon: S, grid_n: usize, atoms: &[(S, S)], rate: &[S]) -> Self {
        let h = horizon / from_usize(grid_n);
        let node_time = |k: usize| if k == grid_n { horizon } else { h * from_usize(k) };
        let mut node_atoms = vec![S::zero(); grid_n + 1];
        let mut interior = vec![Vec::new(); grid_n];
        for &(s, m) in atoms {
            let mut k = (s / h).floor().to_usize().unwrap_or(0).min(grid_n - 1);
            // guard against rounding in s / h
            while k > 0 && s < node_time(k) {
                k -= 1;
            }
            while k + 1 < grid_n && s >= node_time(k + 1) {
                k += 1;
            }
            if s <= node_time(k) {
                node_atoms[k] = node_atoms[k] + m;
            } else if s >= node_time(k + 1) {
                node_atoms[k + 1] = node_atoms[k + 1] + m;
            } else {
                interior[k].push((s, m));
            }
        }
        for cell in interior.iter_mut() {
            cell.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        }
        let decay = (-beta * h).exp();
        let mut node_left = Vec::with_capacity(grid_n + 1);
        let mut node_right = Vec::with_capacity(grid_n + 1);
        node_left.push(y0);
        node_right.push(y0 + beta * node_atoms[0]);
        for k in 0..grid_n {
            let t1 = node_time(k + 1);
            let mut next = node_right[k] * decay + rate[k] * (S::one() - decay);
            for &(s, m) in &interior[k] {
                next = next + beta * m * (-beta * (t1 - s)).exp();
            }
            node_left.push(next);
            node_right.push(next + beta * node_atoms[k + 1]);
        }
        SatisfactionKernel { beta, horizon, h, rate: rate.to_vec(), node_left, node_right, interior }
    }

    pub fn from_plan(plan: &ConsumptionPlan<S>, params: &MarketParams<S>) -> Result<Self> {
        plan.validate()?;
        if !plan.matches(params) {
            return Err(Error::GridMismatch);
        }
        Ok(Self::new(params.y, params.beta, params.horizon, params.grid_n, &plan.atoms, &plan.rate))
    }

    pub fn grid_n(&self) -> usize {
        self.rate.len()
    }

    fn node_time(&self, k: usize) -> S {
        if k == self.grid_n() {
            self.horizon
        } else {
            self.h * from_usize(k)
        }
    }

    /// `Y` at a grid node.
    pub fn at_node(&self, k: usize, side: Side) -> S {
        match side {
            Side::Left => self.node_left[k],
            Side::Right => self.node_right[k],
        }
    }

    /// `Y_t` at an arbitrary time; `side` selects the limit at an atom.
    pub fn eval(&self, t: S, side: Side) -> S {
        let n = self.grid_n();
        let mut k = (t / self.h).floor().to_usize().unwrap_or(0).min(n - 1);
        while k > 0 && t < self.node_time(k) {
            k -= 1;
        }
        while k + 1 < n && t >= self.node_time(k + 1) {
            k += 1;
        }
        let t0 = self.node_time(k);
        if t <= t0 {
            return self.at_node(k, side);
        }
        if t >= self.node_time(k + 1) {
            return self.at_node(k + 1, side);
        }
        let decay = (-self.beta * (t - t0)).exp();
        let mut y = self.node_right[k] * decay + self.rate[k] * (S::one() - decay);
        for &(s, m) in &self.interior[k] {
            if s < t || (s == t && side == Side::Right) {
                y = y + self.beta * m * (-self.beta * (t - s)).exp();
            }
        }
        y
    }

    /// Mesh of grid nodes plus interior atom times, with the mesh index of
    /// every grid node.
    fn mesh(&self) -> (Vec<S>, Vec<usize>) {
        let n = self.grid_n();
        let mut times = Vec::with_capacity(n + 1);
        let mut grid_index = Vec::with_capacity(n + 1);
        for k in 0..n {
            grid_index.push(times.len());
            times.push(self.node_time(k));
            times.extend(self.interior[k].iter().map(|a| a.0));
        }
        grid_index.push(times.len());
        times.push(self.horizon);
        (times, grid_index)
    }
}

/// Satisfaction path sampled on the grid (right limits) together with its
/// closed-form evaluator.
#[derive(Debug, Clone)]
pub struct SatisfactionPath<S> {
    pub sample: PathSample<S>,
    pub kernel: SatisfactionKernel<S>,
}

/// Utility `U` on the grid and its normal coordinate `v` (`U = Λ(v)`).
#[derive(Debug, Clone)]
pub struct UtilityPath<S> {
    pub u: PathSample<S>,
    pub v: PathSample<S>,
}

impl<S: Real> UtilityPath<S> {
    pub fn u0(&self) -> S {
        self.u.first()
    }
}

/// `∇V(C)` on the grid and the price-normalised gradient `Φ = e^{rt}∇V(C)`.
#[derive(Debug, Clone)]
pub struct GradientPath<S> {
    pub grad: PathSample<S>,
    pub phi: PathSample<S>,
}

/// `Y` for a plan.
pub fn satisfaction<S: Real>(plan: &ConsumptionPlan<S>, params: &MarketParams<S>) -> Result<SatisfactionPath<S>> {
    let kernel = SatisfactionKernel::from_plan(plan, params)?;
    let sample = PathSample::new(params.grid(), kernel.node_right.clone());
    Ok(SatisfactionPath { sample, kernel })
}

/// Mesh-level solution of the utility equation.
#[derive(Debug, Clone)]
struct MeshUtility<S> {
    times: Vec<S>,
    grid_index: Vec<usize>,
    y_left: Vec<S>,
    y_right: Vec<S>,
    /// `Y` at interval midpoints.
    y_mid: Vec<S>,
    v: Vec<S>,
}

fn solve_mesh<S: Real>(kernel: &SatisfactionKernel<S>, spec: &FelicitySpec<S>) -> Result<MeshUtility<S>> {
    let (times, grid_index) = kernel.mesh();
    let m = times.len();
    let mut y_left = Vec::with_capacity(m);
    let mut y_right = Vec::with_capacity(m);
    for &t in &times {
        y_left.push(kernel.eval(t, Side::Left));
        y_right.push(kernel.eval(t, Side::Right));
    }
    // grid nodes carry the exact node values (atoms exactly at nodes)
    for (k, &i) in grid_index.iter().enumerate() {
        y_left[i] = kernel.node_left[k];
        y_right[i] = kernel.node_right[k];
    }
    let mut v = vec![S::zero(); m];
    let mut y_mids = vec![S::zero(); m - 1];
    v[m - 1] = spec.terminal_v();
    let half = lit::<S>(0.5);
    let sixth = lit::<S>(1.0 / 6.0);
    for i in (0..m - 1).rev() {
        let (a, b) = (times[i], times[i + 1]);
        let dt = b - a;
        let vb = v[i + 1];
        if dt == S::zero() {
            v[i] = vb;
            continue;
        }
        let mid = a + dt * half;
        let y_mid = kernel.eval(mid, Side::Right);
        y_mids[i] = y_mid;
        let k1 = spec.g(b, y_left[i + 1], vb)?;
        let k2 = spec.g(mid, y_mid, vb + dt * half * k1)?;
        let k3 = spec.g(mid, y_mid, vb + dt * half * k2)?;
        let k4 = spec.g(a, y_right[i], vb + dt * k3)?;
        let va = vb + dt * sixth * (k1 + lit::<S>(2.0) * (k2 + k3) + k4);
        if !va.is_finite() {
            return Err(Error::FelicityDomain {
                t: a.to_f64().unwrap_or(f64::NAN),
                what: format!("utility left the domain of {}", spec.label()),
            });
        }
        v[i] = va;
    }
    Ok(MeshUtility { times, grid_index, y_left, y_right, y_mid: y_mids, v })
}

/// Solves `U_t = ∫_t^T f(s, Y_s, U_s) ds` backwards with classical RK4 on
/// the mesh, working in the felicity's normal coordinate.
pub fn solve_utility<S: Real>(y: &SatisfactionPath<S>, spec: &FelicitySpec<S>) -> Result<UtilityPath<S>> {
    let mesh = solve_mesh(&y.kernel, spec)?;
    Ok(utility_from_mesh(&mesh, spec, y.sample.times.clone()))
}

fn utility_from_mesh<S: Real>(mesh: &MeshUtility<S>, spec: &FelicitySpec<S>, grid: Vec<S>) -> UtilityPath<S> {
    let v: Vec<S> = mesh.grid_index.iter().map(|&i| mesh.v[i]).collect();
    let u = v.iter().map(|&v| spec.u_of_v(v)).collect();
    UtilityPath { u: PathSample::new(grid.clone(), u), v: PathSample::new(grid, v) }
}

/// Full evaluation of a plan: `Y`, `U`, `∇V(C)` and `Φ`, plus the mesh data
/// needed to read the gradient off at atom times.
#[derive(Debug, Clone)]
pub struct Evaluation<S> {
    pub satisfaction: SatisfactionPath<S>,
    pub utility: UtilityPath<S>,
    pub gradient: GradientPath<S>,
    mesh_times: Vec<S>,
    mesh_grad: Vec<S>,
    /// `∫ ∇V dt` over each mesh interval.
    mesh_grad_integral: Vec<S>,
    grid_index: Vec<usize>,
    rate: S,
}

impl<S: Real> Evaluation<S> {
    pub fn u0(&self) -> S {
        self.utility.u0()
    }

    /// `∇V(C)(t)`: exact at mesh nodes, linear in between.
    pub fn grad_at(&self, t: S) -> S {
        let i = self.mesh_times.partition_point(|&s| s < t);
        if i < self.mesh_times.len() && self.mesh_times[i] == t {
            return self.mesh_grad[i];
        }
        if i == 0 {
            return self.mesh_grad[0];
        }
        if i >= self.mesh_times.len() {
            return *self.mesh_grad.last().unwrap();
        }
        let (t0, t1) = (self.mesh_times[i - 1], self.mesh_times[i]);
        let lam = (t - t0) / (t1 - t0);
        self.mesh_grad[i - 1] + (self.mesh_grad[i] - self.mesh_grad[i - 1]) * lam
    }

    /// `∫ ∇V(C)(t) dt` over grid cell `k`: the derivative of `U_0` with
    /// respect to a constant rate on that cell.
    pub fn cell_integral(&self, k: usize) -> S {
        self.mesh_grad_integral[self.grid_index[k]..self.grid_index[k + 1]].iter().copied().sum()
    }

    pub fn phi_at(&self, t: S) -> S {
        (self.rate * t).exp() * self.grad_at(t)
    }
}

fn gradient_on_mesh<S: Real>(mesh: &MeshUtility<S>, spec: &FelicitySpec<S>, beta: S) -> Result<(Vec<S>, Vec<S>)> {
    // Simpson on every mesh interval: the integrands are smooth inside
    // intervals and only kink or jump at mesh nodes.
    let m = mesh.times.len();
    let (t, v) = (&mesh.times, &mesh.v);
    let sixth = lit::<S>(1.0 / 6.0);
    let kernel = |t: S, y: S, v: S, ln_e: S| -> Result<S> { Ok((ln_e - beta * t).exp() * spec.g_y(t, y, v)?) };
    let mut ln_e = spec.ln_dlambda(v[0]);
    let mut piece = vec![S::zero(); m];
    // ∫_a^b ∫_t^b βe^{βt} K(s) ds dt = ∫_a^b K(s)(e^{βs} - e^{βa}) ds
    let mut inner = vec![S::zero(); m];
    for i in 0..m - 1 {
        let (a, b) = (t[i], t[i + 1]);
        let dt = b - a;
        if dt == S::zero() {
            continue;
        }
        let (ya, ym, yb) = (mesh.y_right[i], mesh.y_mid[i], mesh.y_left[i + 1]);
        let ga = spec.g(a, ya, v[i])?;
        let gb = spec.g(b, yb, v[i + 1])?;
        let mid = a + dt * lit(0.5);
        let vm = (v[i] + v[i + 1]) * lit(0.5) + dt * lit::<S>(0.125) * (gb - ga);
        let (da, dm, db) = (spec.g_v(a, ya, v[i])?, spec.g_v(mid, ym, vm)?, spec.g_v(b, yb, v[i + 1])?);
        let ln_mid = ln_e + dt / lit(24.0) * (lit::<S>(5.0) * da + lit::<S>(8.0) * dm - db);
        let ln_b = ln_e + dt * sixth * (da + lit::<S>(4.0) * dm + db);
        let (ka, km, kb) = (kernel(a, ya, v[i], ln_e)?, kernel(mid, ym, vm, ln_mid)?, kernel(b, yb, v[i + 1], ln_b)?);
        piece[i] = dt * sixth * (ka + lit::<S>(4.0) * km + kb);
        let ea = (beta * a).exp();
        inner[i] = dt * sixth * (lit::<S>(4.0) * km * ((beta * mid).exp() - ea) + kb * ((beta * b).exp() - ea));
        if !piece[i].is_finite() {
            return Err(Error::NonFinite(format!("gradient integrand near t = {a:?}")));
        }
        ln_e = ln_b;
    }
    let mut grad = vec![S::zero(); m];
    let mut integral = vec![S::zero(); m - 1];
    let mut tail = S::zero();
    for i in (0..m - 1).rev() {
        integral[i] = inner[i] + tail * ((beta * t[i + 1]).exp() - (beta * t[i]).exp());
        tail = tail + piece[i];
        grad[i] = beta * (beta * t[i]).exp() * tail;
    }
    Ok((grad, integral))
}

/// Evaluates `Y`, `U`, `∇V(C)` and `Φ` for a plan.
pub fn evaluate<S: Real>(
    plan: &ConsumptionPlan<S>,
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
) -> Result<Evaluation<S>> {
    let satisfaction = satisfaction(plan, params)?;
    evaluate_kernel(satisfaction, spec, params)
}

fn evaluate_kernel<S: Real>(
    satisfaction: SatisfactionPath<S>,
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
) -> Result<Evaluation<S>> {
    let mesh = solve_mesh(&satisfaction.kernel, spec)?;
    let grid = satisfaction.sample.times.clone();
    let utility = utility_from_mesh(&mesh, spec, grid.clone());
    let (mesh_grad, mesh_grad_integral) = gradient_on_mesh(&mesh, spec, params.beta)?;
    let grad: Vec<S> = mesh.grid_index.iter().map(|&i| mesh_grad[i]).collect();
    let phi = grid.iter().zip(&grad).map(|(&t, &g)| (params.r * t).exp() * g).collect();
    Ok(Evaluation {
        satisfaction,
        utility,
        gradient: GradientPath { grad: PathSample::new(grid.clone(), grad), phi: PathSample::new(grid, phi) },
        mesh_times: mesh.times,
        mesh_grad,
        mesh_grad_integral,
        grid_index: mesh.grid_index,
        rate: params.r,
    })
}

/// `∇V(C)(t) = β e^{βt} ∫_t^T E_s ∂_y f(s, Y_s, U_s) e^{-βs} ds` with
/// `E_s = exp(∫_0^s ∂_u f)`, and `Φ_t = e^{rt} ∇V(C)(t)`.
pub fn utility_gradient<S: Real>(
    plan: &ConsumptionPlan<S>,
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
) -> Result<GradientPath<S>> {
    Ok(evaluate(plan, spec, params)?.gradient)
}

/// `U_0` of a plan.
pub fn utility0<S: Real>(plan: &ConsumptionPlan<S>, spec: &FelicitySpec<S>, params: &MarketParams<S>) -> Result<S> {
    let kernel = SatisfactionKernel::from_plan(plan, params)?;
    let mesh = solve_mesh(&kernel, spec)?;
    Ok(spec.u_of_v(mesh.v[0]))
}

/// `U_0` of the plan with an extra point mass of signed size `mass` at `t`.
/// Negative masses are allowed as long as `Y` stays in the felicity domain.
pub fn utility0_with_impulse<S: Real>(
    plan: &ConsumptionPlan<S>,
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
    t: S,
    mass: S,
) -> Result<S> {
    plan.validate()?;
    if !plan.matches(params) {
        return Err(Error::GridMismatch);
    }
    if !(t >= S::zero() && t <= params.horizon) {
        return Err(Error::Domain(format!("impulse time {t:?} outside [0, T]")));
    }
    let mut atoms = plan.atoms.clone();
    atoms.push((t, mass));
    let kernel = SatisfactionKernel::new(params.y, params.beta, params.horizon, params.grid_n, &atoms, &plan.rate);
    let mesh = solve_mesh(&kernel, spec)?;
    Ok(spec.u_of_v(mesh.v[0]))
}

/// Central finite difference of `U_0` in the direction of a point mass at `t`.
pub fn directional_derivative<S: Real>(
    plan: &ConsumptionPlan<S>,
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
    t: S,
    eps: S,
) -> Result<S> {
    let up = utility0_with_impulse(plan, spec, params, t, eps)?;
    let down = utility0_with_impulse(plan, spec, params, t, -eps)?;
    Ok((up - down) / (lit::<S>(2.0) * eps))
}

/// Column names of [`table`].
pub const TABLE_COLUMNS: [&str; 6] = ["t", "C_cum", "Y", "U", "gradV", "Phi"];

/// Grid rows `t, C_cum, Y, U, ∇V, Φ` of an evaluated plan.
pub fn table<S: Real>(plan: &ConsumptionPlan<S>, e: &Evaluation<S>) -> Result<Vec<[S; 6]>> {
    let t = &e.satisfaction.sample.times;
    (0..t.len())
        .map(|k| {
            Ok([
                t[k],
                plan.cumulative(t[k])?,
                e.satisfaction.sample.values[k],
                e.utility.u.values[k],
                e.gradient.grad.values[k],
                e.gradient.phi.values[k],
            ])
        })
        .collect()
}

/// `Y` of the zero plan, `y e^{-βt}`, on the grid.
pub fn free_decay<S: Real>(params: &MarketParams<S>) -> PathSample<S> {
    let grid = params.grid();
    let values = grid.iter().map(|&t| params.y * (-params.beta * t).exp()).collect();
    PathSample::new(grid, values)
}

/// Price-weighted cell integral `∫_cell e^{-rt} dt` for cell `k`.
pub fn cell_price<S: Real>(params: &MarketParams<S>, k: usize) -> S {
    params.price(params.time(k)) * one_minus_exp_over(params.r, params.step())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preferences::{ez_felicity, power_felicity, time_additive_felicity, Aggregator, EzParams};
    use std::sync::Arc;

    fn market(n: usize) -> MarketParams<f64> {
        MarketParams::new(1.0, 0.05, 1.0, 1.0, 1.0, n).unwrap()
    }

    #[derive(Debug)]
    struct LinearDiscount(f64);

    impl Aggregator<f64> for LinearDiscount {
        fn f(&self, _t: f64, _y: f64, u: f64) -> f64 {
            1.0 - self.0 * u
        }
        fn f_y(&self, _t: f64, _y: f64, _u: f64) -> f64 {
            0.0
        }
        fn f_u(&self, _t: f64, _y: f64, _u: f64) -> f64 {
            -self.0
        }
        fn f_yy(&self, _t: f64, _y: f64, _u: f64) -> f64 {
            0.0
        }
        fn f_ty(&self, _t: f64, _y: f64, _u: f64) -> f64 {
            0.0
        }
        fn f_uy(&self, _t: f64, _y: f64, _u: f64) -> f64 {
            0.0
        }
    }

    #[test]
    fn empty_plan_decays() {
        let p = market(50);
        let s = satisfaction(&ConsumptionPlan::empty_for(&p), &p).unwrap();
        for (t, y) in s.sample.times.iter().zip(&s.sample.values) {
            assert!((y - (-t).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn initial_gulp_shifts_level() {
        let p = MarketParams::<f64>::new(2.0, 0.0, 0.7, 1.5, 1.0, 40).unwrap();
        let plan = ConsumptionPlan::new(2.0, 40, vec![(0.0, 0.8)], vec![0.0; 40]).unwrap();
        let s = satisfaction(&plan, &p).unwrap();
        for (t, y) in s.sample.times.iter().zip(&s.sample.values) {
            assert!((y - (1.5 + 0.7 * 0.8) * (-0.7 * t).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_rate_builds_up() {
        // y → 0 limit: Y_t = c(1 - e^{-βt}); tiny y keeps params valid
        let p = MarketParams::<f64>::new(1.0, 0.0, 2.0, 1e-300, 1.0, 16).unwrap();
        let plan = ConsumptionPlan::new(1.0, 16, vec![], vec![3.0; 16]).unwrap();
        let s = satisfaction(&plan, &p).unwrap();
        for (t, y) in s.sample.times.iter().zip(&s.sample.values) {
            assert!((y - 3.0 * (1.0 - (-2.0 * t).exp())).abs() < 1e-14);
        }
        for t in [0.01f64, 0.333, 0.9] {
            assert!((s.kernel.eval(t, Side::Right) - 3.0 * (1.0 - (-2.0 * t).exp())).abs() < 1e-14);
        }
    }

    #[test]
    fn interior_atom_is_right_continuous() {
        let p = market(10);
        let plan = ConsumptionPlan::new(1.0, 10, vec![(0.35, 0.5)], vec![0.0; 10]).unwrap();
        let s = satisfaction(&plan, &p).unwrap();
        let left = s.kernel.eval(0.35, Side::Left);
        let right = s.kernel.eval(0.35, Side::Right);
        assert!((right - left - 0.5).abs() < 1e-15);
        assert!((s.kernel.eval(0.6, Side::Right) - ((-0.6f64).exp() + 0.5 * (-0.25f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn zero_felicity_gives_zero_utility() {
        let spec = time_additive_felicity(|_y: f64| 0.0, |_y: f64| 0.0, |_y: f64| 0.0, 0.0);
        let p = market(20);
        let s = satisfaction(&ConsumptionPlan::empty_for(&p), &p).unwrap();
        let u = solve_utility(&s, &spec).unwrap();
        assert!(u.u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_discount_closed_form() {
        let spec = FelicitySpec::custom("1 - 0.1u", Arc::new(LinearDiscount(0.1)), 0.1);
        let p = market(100);
        let s = satisfaction(&ConsumptionPlan::empty_for(&p), &p).unwrap();
        let u = solve_utility(&s, &spec).unwrap();
        let expect = (1.0 - (-0.1f64).exp()) / 0.1;
        assert!((u.u0() - expect).abs() < 1e-12);
        assert!((expect - 0.951626).abs() < 1e-6);
        assert_eq!(u.u.last(), 0.0);
    }

    #[test]
    fn gradient_vanishes_at_horizon() {
        let p = market(50);
        let spec = power_felicity(0.5, 0.1).unwrap();
        let plan = ConsumptionPlan::new(1.0, 50, vec![(0.2, 0.3)], vec![0.4; 50]).unwrap();
        let g = utility_gradient(&plan, &spec, &p).unwrap();
        assert_eq!(g.grad.last(), 0.0);
        assert!(g.grad.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn ez_utility_terminal_value() {
        let p = market(50);
        let spec = ez_felicity(EzParams::new(0.1, 0.3, 1.5));
        let e = evaluate(&ConsumptionPlan::empty_for(&p), &spec, &p).unwrap();
        assert_eq!(e.utility.u.last(), 0.0);
        // ψ < 0: utility diverges at the horizon
        let spec = ez_felicity(EzParams::new(0.1, 0.5, 0.5));
        let e = evaluate(&ConsumptionPlan::empty_for(&p), &spec, &p).unwrap();
        assert!(e.utility.u.last().is_infinite());
        assert!(e.u0().is_finite());
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let p = market(10);
        let plan = ConsumptionPlan::<f64>::empty(1.0, 20);
        assert!(matches!(satisfaction(&plan, &p), Err(Error::GridMismatch)));
    }

    #[test]
    fn single_precision_evaluation() {
        let p = MarketParams::<f32>::new(1.0, 0.05, 1.0, 1.0, 1.0, 40).unwrap();
        let spec = power_felicity(0.5f32, 0.1).unwrap();
        let plan = ConsumptionPlan::new(1.0f32, 40, vec![(0.0, 0.5)], vec![0.5; 40]).unwrap();
        let e = evaluate(&plan, &spec, &p).unwrap();
        let p64 = market(40);
        let spec64 = power_felicity(0.5, 0.1).unwrap();
        let plan64 = ConsumptionPlan::new(1.0, 40, vec![(0.0, 0.5)], vec![0.5; 40]).unwrap();
        let e64 = evaluate(&plan64, &spec64, &p64).unwrap();
        assert!((e.u0() as f64 - e64.u0()).abs() < 1e-5);
        assert!((e.gradient.phi.first() as f64 - e64.gradient.phi.first()).abs() < 1e-5);
    }
}
