//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the solver code paths it is used to check.
#![allow(dead_code)]

use hhk_core::{ConsumptionPlan, EzParams, MarketParams};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Quadrature over `[a, b]` split at the given breakpoints.
pub fn simpson_pieces<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&s| s > a && s < b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    let n = (pts.len() - 1) as f64;
    pts.windows(2).map(|w| simpson(&f, w[0], w[1], tol / n)).sum()
}

/// Satisfaction level straight from the kernel definition, right limit.
pub fn y_direct(plan: &ConsumptionPlan<f64>, p: &MarketParams<f64>, t: f64) -> f64 {
    let b = p.beta;
    let mut y = p.y * (-b * t).exp();
    for &(s, m) in &plan.atoms {
        if s <= t {
            y += b * m * (-b * (t - s)).exp();
        }
    }
    let h = p.horizon / plan.rate.len() as f64;
    for (k, &c) in plan.rate.iter().enumerate() {
        let s0 = k as f64 * h;
        if s0 >= t {
            break;
        }
        let s1 = (s0 + h).min(t);
        // β∫_{s0}^{s1} e^{-β(t-s)} ds
        y += c * ((-b * (t - s1)).exp() - (-b * (t - s0)).exp());
    }
    y
}

/// Breakpoints of a plan: grid nodes and atom times.
pub fn breaks(plan: &ConsumptionPlan<f64>) -> Vec<f64> {
    let n = plan.rate.len();
    let h = plan.horizon / n as f64;
    let mut b: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
    b.extend(plan.atoms.iter().map(|a| a.0));
    b
}

/// EZ utility at 0 via `U_0 = (1-ρ)^{-1}(∫_0^T δ e^{-δs} Y_s^{1-1/α} ds)^ψ`.
pub fn ez_u0(plan: &ConsumptionPlan<f64>, p: &MarketParams<f64>, ez: &EzParams<f64>, tol: f64) -> f64 {
    let a = 1.0 - 1.0 / ez.alpha;
    let psi = (1.0 - ez.rho) / a;
    let integral = simpson_pieces(
        |s| ez.delta * (-ez.delta * s).exp() * y_direct(plan, p, s).powf(a),
        0.0,
        p.horizon,
        &breaks(plan),
        tol,
    );
    integral.powf(psi) / (1.0 - ez.rho)
}

/// Time-additive `∇V(C)(t) = β e^{βt} ∫_t^T e^{-δs} g'(Y_s) e^{-βs} ds`.
pub fn additive_gradient<G: Fn(f64) -> f64>(
    plan: &ConsumptionPlan<f64>,
    p: &MarketParams<f64>,
    delta: f64,
    g1: G,
    t: f64,
) -> f64 {
    let b = p.beta;
    let tail = simpson_pieces(
        |s| (-delta * s - b * s).exp() * g1(y_direct(plan, p, s)),
        t,
        p.horizon,
        &breaks(plan),
        1e-13,
    );
    b * (b * t).exp() * tail
}

/// Random plan with a few atoms (on and off the grid) and blocky rates
/// whose price value is about `scale`.
pub fn random_plan(rng: &mut ChaCha8Rng, p: &MarketParams<f64>, scale: f64) -> ConsumptionPlan<f64> {
    let n = p.grid_n;
    let h = p.horizon / n as f64;
    let mut atoms = Vec::new();
    for _ in 0..rng.gen_range(0..=3) {
        let t = if rng.gen_bool(0.5) {
            rng.gen_range(0..n) as f64 * h
        } else {
            rng.gen_range(0.0..p.horizon)
        };
        atoms.push((t, rng.gen_range(0.0..0.5) * scale));
    }
    let mut rate = vec![0.0; n];
    let blocks = rng.gen_range(1..=4);
    for _ in 0..blocks {
        let k0 = rng.gen_range(0..n);
        let k1 = rng.gen_range(k0..n) + 1;
        let c = rng.gen_range(0.0..1.0) * scale;
        for r in &mut rate[k0..k1] {
            *r += c;
        }
    }
    ConsumptionPlan::new(p.horizon, n, atoms, rate).unwrap()
}

/// Random admissible EZ instance with `ρα` inside `ra` and moderate rates.
pub fn random_ez(rng: &mut ChaCha8Rng, grid_n: usize) -> (MarketParams<f64>, EzParams<f64>) {
    loop {
        let horizon = rng.gen_range(0.5..2.0);
        let r = rng.gen_range(0.0..0.1);
        let beta = rng.gen_range(0.3..2.0);
        let y = rng.gen_range(0.5..2.0);
        let w = rng.gen_range(0.2..2.0);
        let delta = rng.gen_range(0.01..0.3);
        let alpha = if rng.gen_bool(0.5) { rng.gen_range(0.3..0.9) } else { rng.gen_range(1.2..3.0) };
        let rho = rng.gen_range(0.05..0.95) / alpha;
        let ez = EzParams::new(delta, rho, alpha);
        let p = MarketParams::new(horizon, r, beta, y, w, grid_n).unwrap();
        if (rho - 1.0f64).abs() > 0.05 && hhk_core::preferences::validate(&ez, &p).is_empty() {
            return (p, ez);
        }
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Admissible EZ instances with a nondegenerate consumption interval,
/// half in the gulp case and half in the wait case.
pub fn ez_instances(seed: u64, n: usize, grid_n: usize) -> Vec<(MarketParams<f64>, EzParams<f64>)> {
    use hhk_core::ez::{solve_ez, tau_bar, EzCase};
    let mut g = rng(seed);
    let mut out = Vec::new();
    let (mut gulp, mut wait) = (0, 0);
    while out.len() < n {
        let (p, ez) = random_ez(&mut g, grid_n);
        if tau_bar(&p, &ez) <= 0.2 * p.horizon {
            continue;
        }
        let s = solve_ez(&p, &ez).unwrap();
        match s.case {
            EzCase::Gulp if gulp < n - n / 2 => gulp += 1,
            EzCase::Wait if wait < n / 2 && s.tau_bar - s.tau_low.unwrap() > 0.1 * p.horizon => wait += 1,
            _ => continue,
        }
        out.push((p, ez));
    }
    out
}
