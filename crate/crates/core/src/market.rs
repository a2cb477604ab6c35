//! Market parameters, consumption plans and the price functional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, one_minus_exp_over, Real};

/// Horizon, interest rate, satisfaction decay, initial satisfaction,
/// wealth and the number of uniform time steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams<S> {
    #[serde(rename = "T")]
    pub horizon: S,
    pub r: S,
    pub beta: S,
    pub y: S,
    pub w: S,
    pub grid_n: usize,
}

impl<S: Real> MarketParams<S> {
    pub fn new(horizon: S, r: S, beta: S, y: S, w: S, grid_n: usize) -> Result<Self> {
        let p = MarketParams { horizon, r, beta, y, w, grid_n };
        p.validate()?;
        Ok(p)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let finite = [self.horizon, self.r, self.beta, self.y, self.w].iter().all(|x| x.is_finite());
        if !finite {
            v.push("all market parameters must be finite".to_string());
        }
        if !(self.horizon > S::zero()) {
            v.push("T > 0".into());
        }
        if !(self.r >= S::zero()) {
            v.push("r >= 0".into());
        }
        if !(self.beta > S::zero()) {
            v.push("beta > 0".into());
        }
        if !(self.y > S::zero()) {
            v.push("y > 0".into());
        }
        if !(self.w > S::zero()) {
            v.push("w > 0".into());
        }
        if self.grid_n < 2 {
            v.push("grid_n >= 2".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(v))
        }
    }

    /// Grid step `T / grid_n`.
    pub fn step(&self) -> S {
        self.horizon / from_usize(self.grid_n)
    }

    pub fn time(&self, k: usize) -> S {
        if k == self.grid_n {
            self.horizon
        } else {
            self.step() * from_usize(k)
        }
    }

    /// The `grid_n + 1` grid times.
    pub fn grid(&self) -> Vec<S> {
        (0..=self.grid_n).map(|k| self.time(k)).collect()
    }

    /// Price of consumption at time `t`, `e^{-rt}`.
    pub fn price(&self, t: S) -> S {
        (-self.r * t).exp()
    }

    pub fn with_grid(mut self, grid_n: usize) -> Self {
        self.grid_n = grid_n;
        self
    }

    pub fn with_wealth(mut self, w: S) -> Self {
        self.w = w;
        self
    }
}

/// A scalar function of time sampled on the market grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample<S> {
    pub times: Vec<S>,
    pub values: Vec<S>,
}

impl<S: Real> PathSample<S> {
    pub fn new(times: Vec<S>, values: Vec<S>) -> Self {
        debug_assert_eq!(times.len(), values.len());
        PathSample { times, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first(&self) -> S {
        self.values[0]
    }

    pub fn last(&self) -> S {
        *self.values.last().expect("non-empty sample")
    }

    /// Largest absolute difference over entries finite in both samples.
    pub fn sup_distance(&self, other: &Self) -> S {
        self.values
            .iter()
            .zip(&other.values)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    /// Piecewise-linear interpolation; `t` is clamped to the sampled range.
    pub fn interpolate(&self, t: S) -> S {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let lam = (t - t0) / (t1 - t0);
        self.values[k] + (self.values[k + 1] - self.values[k]) * lam
    }
}

/// A nonnegative measure on `[0, T]`: point masses ("gulps") plus a
/// piecewise-constant rate on the uniform grid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumptionPlan<S> {
    pub atoms: Vec<(S, S)>,
    pub rate: Vec<S>,
    pub grid_n: usize,
    #[serde(rename = "T")]
    pub horizon: S,
}

impl<S: Real> ConsumptionPlan<S> {
    /// Builds a plan, sorting atoms by time and merging coincident ones.
    pub fn new(horizon: S, grid_n: usize, mut atoms: Vec<(S, S)>, rate: Vec<S>) -> Result<Self> {
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut merged: Vec<(S, S)> = Vec::with_capacity(atoms.len());
        for (t, m) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == t => last.1 = last.1 + m,
                _ => merged.push((t, m)),
            }
        }
        let plan = ConsumptionPlan { atoms: merged, rate, grid_n, horizon };
        plan.validate()?;
        Ok(plan)
    }

    pub fn empty(horizon: S, grid_n: usize) -> Self {
        ConsumptionPlan { atoms: Vec::new(), rate: vec![S::zero(); grid_n], grid_n, horizon }
    }

    pub fn empty_for(params: &MarketParams<S>) -> Self {
        Self::empty(params.horizon, params.grid_n)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > S::zero()) || self.grid_n == 0 {
            return Err(Error::Domain("plan needs T > 0 and at least one cell".into()));
        }
        if self.rate.len() != self.grid_n {
            return Err(Error::Domain(format!(
                "rate has {} cells, grid_n is {}",
                self.rate.len(),
                self.grid_n
            )));
        }
        for (i, &(t, m)) in self.atoms.iter().enumerate() {
            if !(t >= S::zero() && t <= self.horizon) {
                return Err(Error::Domain(format!("atom time {t:?} outside [0, {:?}]", self.horizon)));
            }
            if !(m >= S::zero()) || !m.is_finite() {
                return Err(Error::Domain(format!("atom mass {m:?} at {t:?} is not a nonnegative number")));
            }
            if i > 0 && !(self.atoms[i - 1].0 < t) {
                return Err(Error::Domain("atom times must be strictly increasing".into()));
            }
        }
        if let Some(c) = self.rate.iter().find(|c| !(**c >= S::zero()) || !c.is_finite()) {
            return Err(Error::Domain(format!("rate value {c:?} is not a nonnegative number")));
        }
        Ok(())
    }

    pub fn cell_width(&self) -> S {
        self.horizon / from_usize(self.grid_n)
    }

    pub fn cell_start(&self, k: usize) -> S {
        if k == self.grid_n {
            self.horizon
        } else {
            self.cell_width() * from_usize(k)
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.grid_n == other.grid_n && self.horizon == other.horizon
    }

    pub fn matches(&self, params: &MarketParams<S>) -> bool {
        self.grid_n == params.grid_n && self.horizon == params.horizon
    }

    /// Cumulative consumption `C_t` (right-continuous, `C_{0-} = 0`).
    pub fn cumulative(&self, t: S) -> Result<S> {
        if !(t >= S::zero() && t <= self.horizon) {
            return Err(Error::Domain(format!("time {t:?} outside [0, {:?}]", self.horizon)));
        }
        let atoms: S = self.atoms.iter().filter(|a| a.0 <= t).map(|a| a.1).sum();
        let mut acc = S::zero();
        for (k, &c) in self.rate.iter().enumerate() {
            let a = self.cell_start(k);
            if a >= t {
                break;
            }
            let b = self.cell_start(k + 1).min(t);
            acc = acc + c * (b - a);
        }
        Ok(atoms + acc)
    }

    pub fn total(&self) -> S {
        self.atoms.iter().map(|a| a.1).sum::<S>() + self.rate.iter().copied().sum::<S>() * self.cell_width()
    }

    /// Present value `∫ e^{-rt} dC_t`; cell integrals of the price are exact.
    pub fn price_functional(&self, r: S) -> Result<S> {
        self.validate()?;
        let h = self.cell_width();
        let atoms: S = self.atoms.iter().map(|&(t, m)| m * (-r * t).exp()).sum();
        let unit = one_minus_exp_over(r, h);
        let rates: S = self
            .rate
            .iter()
            .enumerate()
            .map(|(k, &c)| c * (-r * self.cell_start(k)).exp() * unit)
            .sum();
        Ok(atoms + rates)
    }

    /// Convex combination `λ·self + (1-λ)·other`.
    pub fn mix(&self, other: &Self, lambda: S) -> Result<Self> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        if !(lambda >= S::zero() && lambda <= S::one()) {
            return Err(Error::Domain(format!("mixing weight {lambda:?} outside [0, 1]")));
        }
        let mu = S::one() - lambda;
        let atoms = self
            .atoms
            .iter()
            .map(|&(t, m)| (t, lambda * m))
            .chain(other.atoms.iter().map(|&(t, m)| (t, mu * m)))
            .collect();
        let rate = self.rate.iter().zip(&other.rate).map(|(a, b)| lambda * *a + mu * *b).collect();
        Self::new(self.horizon, self.grid_n, atoms, rate)
    }

    /// Multiplies every atom and rate by `factor ≥ 0`.
    pub fn scaled(&self, factor: S) -> Self {
        ConsumptionPlan {
            atoms: self.atoms.iter().map(|&(t, m)| (t, m * factor)).collect(),
            rate: self.rate.iter().map(|&c| c * factor).collect(),
            grid_n: self.grid_n,
            horizon: self.horizon,
        }
    }

    /// Same measure on a grid with `factor` times as many cells.
    pub fn refined(&self, factor: usize) -> Self {
        let rate = self.rate.iter().flat_map(|&c| std::iter::repeat_n(c, factor)).collect();
        ConsumptionPlan { atoms: self.atoms.clone(), rate, grid_n: self.grid_n * factor, horizon: self.horizon }
    }

    /// Adds a point mass, merging with an existing atom at the same time.
    pub fn with_atom(&self, t: S, m: S) -> Result<Self> {
        let mut atoms = self.atoms.clone();
        atoms.push((t, m));
        Self::new(self.horizon, self.grid_n, atoms, self.rate.clone())
    }

    /// Grid cells carrying a rate above `eps`.
    pub fn active_cells(&self, eps: S) -> Vec<usize> {
        self.rate.iter().enumerate().filter(|(_, c)| **c > eps).map(|(k, _)| k).collect()
    }

    /// Largest absolute rate difference over cells.
    pub fn rate_distance(&self, other: &Self) -> S {
        self.rate.iter().zip(&other.rate).fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    pub fn midpoint(&self, k: usize) -> S {
        (self.cell_start(k) + self.cell_start(k + 1)) * lit(0.5)
    }
}
