//! Value iteration on the state `(t, X, Y)`.
//!
//! Outer iterate `n` freezes the previous value `v⁽ⁿ⁻¹⁾` inside the
//! generator, which makes the inner problem time-additive; that inner
//! problem is solved exactly on the grid by a backward sweep. Values are
//! kept in the normal coordinate `v` and mapped through `Λ` on output.
//!
//! Within a step, wealth and satisfaction move along their exact
//! exponential solutions for a constant rate. Off-grid lookups are
//! bilinear in `(X, Y)` and linear in time at the half step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{ConsumptionPlan, MarketParams};
use crate::preferences::FelicitySpec;
use crate::scalar::{from_usize, lit, one_minus_exp_over, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpOptions {
    /// Time steps.
    pub nt: usize,
    /// Wealth nodes.
    pub nx: usize,
    /// Satisfaction nodes.
    pub ny: usize,
    /// Sup-norm stopping tolerance on successive iterates, in `v`.
    pub tol: f64,
    pub max_iter: usize,
    /// Gulp sizes as fractions of current wealth, applied at step starts.
    pub gulps: Vec<f64>,
    /// Number of nonzero rate levels on the geometric ladder.
    pub rate_levels: usize,
    /// Ratio between successive ladder levels.
    pub rate_ratio: f64,
}

impl Default for DpOptions {
    fn default() -> Self {
        DpOptions {
            nt: 50,
            nx: 40,
            ny: 40,
            tol: 1e-10,
            max_iter: 60,
            gulps: vec![0.0, 0.25, 0.5, 1.0],
            rate_levels: 24,
            rate_ratio: std::f64::consts::SQRT_2,
        }
    }
}

impl DpOptions {
    /// Same options with every grid resolution multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        DpOptions { nt: self.nt * factor, nx: self.nx * factor, ny: self.ny * factor, ..self.clone() }
    }
}

/// Uniform axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis<S> {
    pub lo: S,
    pub hi: S,
    pub n: usize,
}

impl<S: Real> Axis<S> {
    pub fn new(lo: S, hi: S, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::InvalidParams(vec![format!("axis needs n ≥ 2 and hi > lo (n = {n})")]));
        }
        Ok(Axis { lo, hi, n })
    }

    pub fn step(&self) -> S {
        (self.hi - self.lo) / from_usize(self.n - 1)
    }

    pub fn node(&self, i: usize) -> S {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + self.step() * from_usize(i)
        }
    }

    pub fn nodes(&self) -> Vec<S> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Cell index and weight of the upper node; flags points outside the box.
    fn locate(&self, z: S) -> (usize, S, bool) {
        let slack = self.step() * lit(1e-9);
        let out = z < self.lo - slack || z > self.hi + slack;
        let s = ((z - self.lo) / self.step()).max(S::zero()).min(from_usize(self.n - 1));
        let i = s.floor().to_usize().unwrap_or(0).min(self.n - 2);
        (i, s - from_usize(i), out)
    }
}

/// `v⁽ⁿ⁾` at every grid node, slice-major in time, then wealth, then satisfaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid<S> {
    pub times: Vec<S>,
    pub x: Axis<S>,
    pub y: Axis<S>,
    pub values: Vec<S>,
    pub iteration: usize,
}

impl<S: Real> ValueGrid<S> {
    /// `U⁽⁰⁾ ≡ 0`.
    pub fn initial(spec: &FelicitySpec<S>, times: Vec<S>, x: Axis<S>, y: Axis<S>) -> Self {
        let len = times.len() * x.n * y.n;
        ValueGrid { times, x, y, values: vec![spec.terminal_v(); len], iteration: 0 }
    }

    fn slice_len(&self) -> usize {
        self.x.n * self.y.n
    }

    pub fn slice(&self, k: usize) -> &[S] {
        let m = self.slice_len();
        &self.values[k * m..(k + 1) * m]
    }

    pub fn at(&self, k: usize, i: usize, j: usize) -> S {
        self.values[k * self.slice_len() + i * self.y.n + j]
    }

    /// Bilinear lookup on slice `k`; the flag reports a clamped query.
    pub fn interp(&self, k: usize, x: S, y: S) -> (S, bool) {
        bilinear(self.slice(k), &self.x, &self.y, x, y)
    }

    /// `(x, y, U)` rows for slice `k`.
    pub fn utility_slice(&self, k: usize, spec: &FelicitySpec<S>) -> Vec<(S, S, S)> {
        let mut rows = Vec::with_capacity(self.slice_len());
        for i in 0..self.x.n {
            for j in 0..self.y.n {
                rows.push((self.x.node(i), self.y.node(j), spec.u_of_v(self.at(k, i, j))));
            }
        }
        rows
    }

    fn sup_distance_by_slice(&self, other: &Self) -> Vec<S> {
        (0..self.times.len())
            .map(|k| {
                self.slice(k)
                    .iter()
                    .zip(other.slice(k))
                    .fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs()))
            })
            .collect()
    }
}

fn bilinear<S: Real>(slice: &[S], xa: &Axis<S>, ya: &Axis<S>, x: S, y: S) -> (S, bool) {
    let (i, fx, ox) = xa.locate(x);
    let (j, fy, oy) = ya.locate(y);
    let n = ya.n;
    let v00 = slice[i * n + j];
    let v01 = slice[i * n + j + 1];
    let v10 = slice[(i + 1) * n + j];
    let v11 = slice[(i + 1) * n + j + 1];
    let one = S::one();
    let v = (one - fx) * ((one - fy) * v00 + fy * v01) + fx * ((one - fy) * v10 + fy * v11);
    (v, ox || oy)
}

/// Greedy control index per `(k, i, j)` node of the last sweep, `k < nt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpPolicy<S> {
    /// `(gulp fraction, fraction of post-gulp wealth spent at a constant rate over the step)`.
    pub controls: Vec<(S, S)>,
    pub choice: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpHistory<S> {
    /// Sup-norm change of `v` per outer iterate.
    pub deltas: Vec<S>,
    /// Same change, per time slice.
    pub slice_deltas: Vec<Vec<S>>,
    /// `U⁽ⁿ⁾(0, w, y)` from a one-step lookahead at the exact initial state.
    pub utility0: Vec<S>,
    /// Off-box lookups across all sweeps.
    pub clamped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSolution<S> {
    pub grid: ValueGrid<S>,
    /// Iterate `n - 1`; the generator argument for the last sweep.
    pub previous: ValueGrid<S>,
    pub policy: DpPolicy<S>,
    pub history: DpHistory<S>,
    pub converged: bool,
}

impl<S: Real> DpSolution<S> {
    pub fn iterations(&self) -> usize {
        self.grid.iteration
    }

    /// `U⁽ⁿ⁾(0, w, y)` of the last iterate.
    pub fn utility0(&self) -> S {
        *self.history.utility0.last().expect("at least one sweep")
    }
}

/// Box covering every reachable state with margin.
pub fn default_axes<S: Real>(params: &MarketParams<S>, opts: &DpOptions) -> Result<(Axis<S>, Axis<S>)> {
    let grow = (params.r * params.horizon).exp();
    let margin: S = lit(1.05);
    let x = Axis::new(S::zero(), params.w * grow * margin, opts.nx)?;
    let y_min = params.y * (-params.beta * params.horizon).exp() / lit(2.0);
    let y = Axis::new(y_min, (params.y + params.beta * params.w * grow) * margin, opts.ny)?;
    Ok((x, y))
}

pub fn controls<S: Real>(opts: &DpOptions) -> Result<Vec<(S, S)>> {
    if opts.gulps.iter().any(|g| !(0.0..=1.0).contains(g)) || !(opts.rate_ratio > 1.0) {
        return Err(Error::InvalidParams(vec!["gulp fractions in [0, 1] and rate ratio > 1".into()]));
    }
    let mut rates = vec![S::zero()];
    rates.extend((0..opts.rate_levels).map(|k| lit::<S>(opts.rate_ratio.powi(-(k as i32)))));
    let mut out = Vec::with_capacity(opts.gulps.len() * rates.len());
    for &g in &opts.gulps {
        for &q in &rates {
            out.push((lit(g), q));
        }
    }
    Ok(out)
}

/// Per-step constants shared by every node.
struct Step<S> {
    h: S,
    beta: S,
    decay_half: S,
    decay: S,
    pv_half: S,
    pv: S,
    grow_half: S,
    grow: S,
}

impl<S: Real> Step<S> {
    fn new(params: &MarketParams<S>, h: S) -> Self {
        let half = h / lit(2.0);
        Step {
            h,
            beta: params.beta,
            decay_half: (-params.beta * half).exp(),
            decay: (-params.beta * h).exp(),
            pv_half: one_minus_exp_over(params.r, half),
            pv: one_minus_exp_over(params.r, h),
            grow_half: (params.r * half).exp(),
            grow: (params.r * h).exp(),
        }
    }

    /// States at the start, middle and end of the step, plus the rate.
    fn propagate(&self, x: S, y: S, control: (S, S)) -> ([(S, S); 3], S, S) {
        let (gulp, q) = control;
        let mass = gulp * x;
        let x1 = x - mass;
        let y1 = y + self.beta * mass;
        let c = if q == S::zero() { S::zero() } else { q * x1 / self.pv };
        let xm = (self.grow_half * (x1 - c * self.pv_half)).max(S::zero());
        let xe = self.grow * x1 * (S::one() - q);
        let ym = c + (y1 - c) * self.decay_half;
        let ye = c + (y1 - c) * self.decay;
        ([(x1, y1), (xm, ym), (xe, ye)], mass, c)
    }
}

/// Previous-iterate lookups at the three Simpson nodes of step `k`.
enum Frozen<'a, S> {
    Constant(S),
    Grid(&'a ValueGrid<S>),
}

impl<S: Real> Frozen<'_, S> {
    fn at(&self, k: usize, s: [(S, S); 3]) -> ([S; 3], usize) {
        match self {
            Frozen::Constant(v) => ([*v; 3], 0),
            Frozen::Grid(g) => {
                let (a, ca) = g.interp(k, s[0].0, s[0].1);
                let (m0, c0) = g.interp(k, s[1].0, s[1].1);
                let (m1, c1) = g.interp(k + 1, s[1].0, s[1].1);
                let (b, cb) = g.interp(k + 1, s[2].0, s[2].1);
                let half: S = lit(0.5);
                ([a, half * (m0 + m1), b], [ca, c0, c1, cb].iter().filter(|c| **c).count())
            }
        }
    }
}

struct Sweep<'a, S> {
    spec: &'a FelicitySpec<S>,
    step: Step<S>,
    controls: &'a [(S, S)],
    frozen: Frozen<'a, S>,
    times: &'a [S],
    x: Axis<S>,
    y: Axis<S>,
}

impl<S: Real> Sweep<'_, S> {
    /// Best one-step value from state `(x, y)` at slice `k`, given slice `k+1` of the current iterate.
    fn best(&self, k: usize, next: &[S], x: S, y: S) -> Result<(S, u16, usize)> {
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let tm = (t0 + t1) / lit(2.0);
        let mut best = (S::neg_infinity(), 0u16);
        let mut clamped = 0;
        let six: S = lit(6.0);
        let four: S = lit(4.0);
        for (idx, &ctl) in self.controls.iter().enumerate() {
            if idx > 0 && x == S::zero() {
                break;
            }
            let (s, _, _) = self.step.propagate(x, y, ctl);
            let (vp, c) = self.frozen.at(k, s);
            let g0 = self.spec.g(t0, s[0].1, vp[0])?;
            let gm = self.spec.g(tm, s[1].1, vp[1])?;
            let g1 = self.spec.g(t1, s[2].1, vp[2])?;
            let (cont, out) = bilinear(next, &self.x, &self.y, s[2].0, s[2].1);
            let value = self.step.h / six * (g0 + four * gm + g1) + cont;
            clamped += c + usize::from(out);
            if value > best.0 {
                best = (value, idx as u16);
            }
        }
        if !best.0.is_finite() {
            return Err(Error::NonFinite(format!("dp value at t = {:?}", t0)));
        }
        Ok((best.0, best.1, clamped))
    }
}

fn sweep<S: Real>(
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
    controls: &[(S, S)],
    previous: &ValueGrid<S>,
    first: bool,
) -> Result<(ValueGrid<S>, Vec<u16>, u64)> {
    let nt = previous.times.len() - 1;
    let h = params.horizon / from_usize(nt);
    let frozen = if first { Frozen::Constant(spec.terminal_v()) } else { Frozen::Grid(previous) };
    let sw = Sweep { spec, step: Step::new(params, h), controls, frozen, times: &previous.times, x: previous.x, y: previous.y };
    let mut grid = ValueGrid::initial(spec, previous.times.clone(), previous.x, previous.y);
    grid.iteration = previous.iteration + 1;
    let m = grid.slice_len();
    let ny = grid.y.n;
    let mut choice = vec![0u16; nt * m];
    let mut clamped = 0u64;
    for k in (0..nt).rev() {
        let (head, tail) = grid.values.split_at_mut((k + 1) * m);
        let next = &tail[..m];
        let out: Vec<(S, u16, usize)> = (0..m)
            .into_par_iter()
            .map(|idx| sw.best(k, next, sw.x.node(idx / ny), sw.y.node(idx % ny)))
            .collect::<Result<_>>()?;
        for (idx, (v, c, n)) in out.into_iter().enumerate() {
            head[k * m + idx] = v;
            choice[k * m + idx] = c;
            clamped += n as u64;
        }
    }
    Ok((grid, choice, clamped))
}

/// One Bellman sweep: iterate `n` from iterate `n - 1`.
pub fn bellman_step<S: Real>(
    grid: &ValueGrid<S>,
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
    controls: &[(S, S)],
) -> Result<ValueGrid<S>> {
    Ok(sweep(spec, params, controls, grid, grid.iteration == 0)?.0)
}

/// `v⁽ⁿ⁾(t_k, x, y)` at an arbitrary state by maximizing over controls
/// against the stored slices rather than interpolating slice `k`.
pub fn value_at<S: Real>(
    sol: &DpSolution<S>,
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
    k: usize,
    x: S,
    y: S,
) -> Result<S> {
    Ok(lookahead(sol, spec, params, k, x, y)?.0)
}

fn lookahead<S: Real>(
    sol: &DpSolution<S>,
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
    k: usize,
    x: S,
    y: S,
) -> Result<(S, u16)> {
    let grid = &sol.grid;
    let nt = grid.times.len() - 1;
    if k >= nt {
        return Ok((spec.terminal_v(), 0));
    }
    let h = params.horizon / from_usize(nt);
    let frozen =
        if sol.previous.iteration == 0 { Frozen::Constant(spec.terminal_v()) } else { Frozen::Grid(&sol.previous) };
    let sw = Sweep {
        spec,
        step: Step::new(params, h),
        controls: &sol.policy.controls,
        frozen,
        times: &grid.times,
        x: grid.x,
        y: grid.y,
    };
    let (v, c, _) = sw.best(k, grid.slice(k + 1), x, y)?;
    Ok((v, c))
}

/// Value iteration from `U⁽⁰⁾ ≡ 0` until the sup-norm change drops below `opts.tol`.
pub fn iterate_to_convergence<S: Real>(
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
    opts: &DpOptions,
) -> Result<DpSolution<S>> {
    let (x, y) = default_axes(params, opts)?;
    iterate_on_axes(spec, params, opts, x, y)
}

/// As [`iterate_to_convergence`] on a caller-supplied state box.
pub fn iterate_on_axes<S: Real>(
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
    opts: &DpOptions,
    x: Axis<S>,
    y: Axis<S>,
) -> Result<DpSolution<S>> {
    params.validate()?;
    if opts.nt == 0 || opts.max_iter == 0 || !(opts.tol > 0.0) {
        return Err(Error::InvalidParams(vec!["dp needs nt ≥ 1, max_iter ≥ 1 and tol > 0".into()]));
    }
    let controls = controls::<S>(opts)?;
    let h = params.horizon / from_usize(opts.nt);
    let times: Vec<S> =
        (0..=opts.nt).map(|k| if k == opts.nt { params.horizon } else { h * from_usize(k) }).collect();
    let mut previous = ValueGrid::initial(spec, times, x, y);
    let mut history = DpHistory { deltas: vec![], slice_deltas: vec![], utility0: vec![], clamped: 0 };
    let tol: S = lit(opts.tol);
    loop {
        let (grid, choice, clamped) = sweep(spec, params, &controls, &previous, previous.iteration == 0)?;
        let slices = grid.sup_distance_by_slice(&previous);
        let delta = slices.iter().fold(S::zero(), |m, d| m.max(*d));
        history.clamped += clamped;
        history.deltas.push(delta);
        history.slice_deltas.push(slices);
        let mut sol = DpSolution {
            grid,
            previous,
            policy: DpPolicy { controls: controls.clone(), choice },
            history,
            converged: delta < tol,
        };
        let v0 = value_at(&sol, spec, params, 0, params.w, params.y)?;
        sol.history.utility0.push(spec.u_of_v(v0));
        log::debug!("dp iterate {}: delta {:?}", sol.grid.iteration, delta);
        if sol.converged || sol.grid.iteration >= opts.max_iter {
            return Ok(sol);
        }
        previous = sol.grid;
        history = sol.history;
    }
}

/// Greedy rollout from `start = (x, y)` at time 0: at each step the control
/// maximizing the one-step lookahead at the exact state is applied.
pub fn extract_policy_plan<S: Real>(
    sol: &DpSolution<S>,
    spec: &FelicitySpec<S>,
    params: &MarketParams<S>,
    start: (S, S),
) -> Result<ConsumptionPlan<S>> {
    let nt = sol.grid.times.len() - 1;
    let step = Step::new(params, params.horizon / from_usize(nt));
    let (mut x, mut y) = start;
    let mut atoms = Vec::new();
    let mut rate = vec![S::zero(); nt];
    for k in 0..nt {
        let (_, idx) = lookahead(sol, spec, params, k, x, y)?;
        let (s, mass, c) = step.propagate(x, y, sol.policy.controls[idx as usize]);
        if mass > S::zero() {
            atoms.push((sol.grid.times[k], mass));
        }
        rate[k] = c;
        x = s[2].0;
        y = s[2].1;
    }
    ConsumptionPlan::new(params.horizon, nt, atoms, rate)
}
