mod common;

use common::*;
use hhk_core::constructor::{picard_iterate, rate_ode_rhs, solve, ConstructorOptions};
use hhk_core::ez::solve_ez;
use hhk_core::{ez_felicity, power_felicity, EzParams, MarketParams};

/// Sup distance of rates over cells not touching the closed-form support
/// boundary.
fn interior_rate_gap(a: &[f64], b: &[f64], p: &MarketParams<f64>, lo: f64, hi: f64) -> f64 {
    let h = p.step();
    (0..p.grid_n)
        .filter(|&k| {
            let (t0, t1) = (p.time(k), p.time(k + 1));
            let touches = |x: f64| x > t0 - h && x < t1 + h && x > 0.0;
            !touches(lo) && !touches(hi)
        })
        .map(|k| (a[k] - b[k]).abs())
        .fold(0.0, f64::max)
}

fn opts() -> ConstructorOptions {
    ConstructorOptions::default()
}

#[test]
fn reproduces_closed_form_ez_plans() {
    for (p, ez) in ez_instances(42, 4, 400) {
        let closed = solve_ez(&p, &ez).unwrap();
        let built = solve(&ez_felicity(ez), &p, &opts()).unwrap();
        let (lo, hi) = closed.consumption_interval();
        assert!(interior_rate_gap(&closed.plan.rate, &built.plan.rate, &p, lo, hi) <= 1e-4);
        assert!((built.t0 - lo).abs() <= p.step(), "t0 {} vs {lo}", built.t0);
        assert!((built.t1 - hi).abs() <= p.step(), "t1 {} vs {hi}", built.t1);
        let gulp = |plan: &hhk_core::Plan| plan.atoms.first().map_or(0.0, |a| a.1);
        assert!((gulp(&closed.plan) - gulp(&built.plan)).abs() <= 1e-4);
        assert!((built.budget - p.w).abs() <= 1e-6 * p.w);
        assert_eq!(built.monotonicity_violations, 0);
    }
}

#[test]
fn power_felicity_matches_ez_route() {
    // time-additive y^p/p with p = 1 - 1/α is the ρα = 1 member of the EZ family
    for (p, ez) in ez_instances(43, 4, 400) {
        let power = power_felicity(1.0 - 1.0 / ez.alpha, ez.delta).unwrap();
        let built = solve(&power, &p, &opts()).unwrap();
        let closed = solve_ez(&p, &ez).unwrap();
        let (lo, hi) = closed.consumption_interval();
        assert!(interior_rate_gap(&closed.plan.rate, &built.plan.rate, &p, lo, hi) <= 1e-5);
        assert!(built.iterations.len() <= 2);
    }
}

#[test]
fn constructed_optimum_passes_kkt() {
    for (p, ez) in ez_instances(44, 4, 400) {
        let built = solve(&ez_felicity(ez), &p, &opts()).unwrap();
        assert!(built.verified);
        let kkt = built.kkt.unwrap();
        assert!(kkt.pass, "{:?}", kkt.checks);
        assert!(kkt.support_connected);
        assert!(built.plan.atoms.iter().all(|a| a.0 == 0.0));
    }
}

#[test]
fn emitted_rate_solves_the_rate_equation() {
    let p = MarketParams::<f64>::new(1.0, 0.03, 1.2, 1.0, 0.6, 400).unwrap();
    let spec = power_felicity(-1.0, 0.1).unwrap();
    let built = solve(&spec, &p, &opts()).unwrap();
    let h = p.step();
    let mut checked = 0;
    for k in 0..p.grid_n {
        let (a, b) = (p.time(k), p.time(k + 1));
        if a <= built.t0 + h || b >= built.t1 - h {
            continue;
        }
        let (y0, y1) = (built.y_path.values[k], built.y_path.values[k + 1]);
        let (u0, u1) = (built.u_path.values[k], built.u_path.values[k + 1]);
        let (_, rate) = rate_ode_rhs(&spec, &p, 0.5 * (a + b), (y0 * y1).sqrt(), 0.5 * (u0 + u1)).unwrap();
        assert!(rel(built.plan.rate[k], rate) <= 1e-6, "cell {k}: {} vs {rate}", built.plan.rate[k]);
        checked += 1;
    }
    assert!(checked > 100);
}

#[test]
fn picard_converges_on_desk_instances() {
    let desk = [
        (0.1, 0.5, 1.5),
        (0.05, 0.3, 2.0),
        (0.2, 0.6, 1.2),
        (0.1, 0.8, 0.9),
        (0.15, 0.7, 0.6),
    ];
    let p = MarketParams::<f64>::new(1.0, 0.05, 1.0, 1.0, 1.0, 200).unwrap();
    for (delta, rho_alpha, alpha) in desk {
        let ez = EzParams::new(delta, rho_alpha / alpha, alpha);
        let spec = ez_felicity(ez);
        let m = solve(&spec, &p, &opts()).unwrap().m;
        let its = picard_iterate(&spec, &p, m, 50, 1e-6).unwrap();
        let last = its.last().unwrap();
        assert!(last.delta < 1e-6, "ρα={rho_alpha}: {} after {}", last.delta, its.len());
    }
}

#[test]
fn additive_felicity_converges_in_two_steps() {
    let p = MarketParams::<f64>::new(1.0, 0.05, 1.0, 1.0, 1.0, 200).unwrap();
    for spec in [power_felicity(0.5, 0.0).unwrap(), power_felicity(-1.0, 0.2).unwrap()] {
        let its = picard_iterate(&spec, &p, 0.8, 10, 1e-300).unwrap();
        assert!(its.len() >= 2);
        assert_eq!(its[1].delta, 0.0);
        assert_eq!(its[1].plan, its[0].plan);
    }
}

#[test]
fn vanishing_wealth_collapses_the_interval() {
    let spec = power_felicity(-1.0, 0.1).unwrap();
    let mut widths = Vec::new();
    for w in [1e-2, 1e-3, 1e-4] {
        let p = MarketParams::<f64>::new(1.0, 0.03, 1.2, 1.0, w, 400).unwrap();
        let built = solve(&spec, &p, &opts()).unwrap();
        assert!(built.plan.total() < 2.0 * w);
        assert!(built.plan.atoms.is_empty());
        widths.push(built.t1 - built.t0);
    }
    assert!(widths[0] > widths[1] && widths[1] > widths[2], "{widths:?}");
}

#[test]
fn contraction_on_final_window() {
    // sup-norm ratios of successive U deltas, restricted to [s, T] with L(T-s) < 1
    let p = MarketParams::<f64>::new(1.0, 0.05, 1.0, 1.0, 1.0, 200).unwrap();
    let ez = EzParams::new(0.3, 0.4, 1.5);
    let spec = ez_felicity(ez);
    let m = solve(&spec, &p, &opts()).unwrap().m;
    let its = picard_iterate(&spec, &p, m, 30, 1e-13).unwrap();
    let s = p.horizon - 0.5 / ez.delta.max(1e-12);
    let window = |a: &hhk_core::Sample, b: &hhk_core::Sample| {
        a.times.iter().zip(a.values.iter().zip(&b.values))
            .filter(|(t, (x, y))| **t >= s && x.is_finite() && y.is_finite())
            .fold(0.0f64, |m, (_, (x, y))| m.max((x - y).abs()))
    };
    let d: Vec<f64> = its.windows(2).map(|w| window(&w[1].u, &w[0].u)).collect();
    for r in d.windows(2).filter(|r| r[0] > 1e-12) {
        assert!(r[1] / r[0] < 1.0, "{r:?}");
    }
}
