//! Acceptance gate. One line per criterion; exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use hhk_core::constructor::{picard_iterate, solve, ConstructorOptions};
use hhk_core::dp::{iterate_to_convergence, DpOptions};
use hhk_core::ez::{solve_ez, EzCase};
use hhk_core::kkt::{verify_kkt, KktTolerances};
use hhk_core::oracle::{exhaustive_search, projected_gradient_ascent, AscentOptions, DiscretizedProblem};
use hhk_core::paths::{directional_derivative, evaluate, utility0};
use hhk_core::preferences::validate;
use hhk_core::{ez_felicity, power_felicity, ConsumptionPlan, EzParams, MarketParams};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn criterion(id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let took = start.elapsed();
    let in_time = limit.is_none_or(|l| took <= l);
    let pass = v.pass && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" of {} s", l.as_secs()));
    println!(
        "[{}] {id}. {name}: {} ({:.1} s{budget}{})",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        took.as_secs_f64(),
        if in_time { "" } else { ", over time" },
    );
    pass
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn zero_plan_utility() -> Verdict {
    let mut g = rng(101);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (p, ez) = random_ez(&mut g, 1000);
        let plan = ConsumptionPlan::empty_for(&p);
        let u0 = utility0(&plan, &ez_felicity(ez), &p).unwrap();
        worst = worst.max(rel(u0, ez_u0(&plan, &p, &ez, 1e-13)));
    }
    verdict(worst <= 1e-6, format!("10 instances, worst rel err {worst:.2e}"))
}

fn gradient_check() -> Verdict {
    let mut g = rng(102);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (p, ez) = random_ez(&mut g, 400);
        let spec = ez_felicity(ez);
        let plan = random_plan(&mut g, &p, 1.0);
        let e = evaluate(&plan, &spec, &p).unwrap();
        for _ in 0..10 {
            let t = g.gen_range(0.0..0.98) * p.horizon;
            let fd = directional_derivative(&plan, &spec, &p, t, 1e-4).unwrap();
            worst = worst.max(rel(fd, e.grad_at(t)));
        }
    }
    verdict(worst <= 1e-3, format!("200 probes, worst rel err {worst:.2e}"))
}

fn kkt_audit() -> Verdict {
    let (mut budget, mut flat, mut margin) = (0.0f64, 0.0f64, f64::MIN);
    let (mut gulp, mut wait, mut passed) = (0, 0, 0);
    for (p, ez) in ez_instances(103, 10, 1000) {
        let s = solve_ez(&p, &ez).unwrap();
        let r = verify_kkt(&s.plan, &ez_felicity(ez), &p, KktTolerances::default()).unwrap();
        match s.case {
            EzCase::Gulp => gulp += 1,
            _ => wait += 1,
        }
        budget = budget.max(r.budget_gap.abs() / p.w);
        flat = flat.max(r.support_flatness);
        margin = margin.max(r.off_support_margin);
        passed += usize::from(r.pass && r.budget_gap.abs() <= 1e-6 * p.w && r.support_flatness <= 1e-4 && r.off_support_margin < 0.0);
    }
    verdict(
        passed == 10 && gulp > 0 && wait > 0,
        format!("{passed}/10 pass ({gulp} gulp, {wait} wait), budget {budget:.1e}, flatness {flat:.1e}, off-support margin {margin:.1e}"),
    )
}

fn oracle_equivalence() -> Verdict {
    let (mut asc_gap, mut ex_gap) = (0.0f64, f64::MIN);
    for (p, ez) in ez_instances(104, 3, 200) {
        let spec = ez_felicity(ez);
        let best = utility0(&solve_ez(&p, &ez).unwrap().plan, &spec, &p).unwrap();
        let asc = projected_gradient_ascent(&p, &spec, None, &AscentOptions::default()).unwrap();
        asc_gap = asc_gap.max(rel(asc.utility, best));
        let ex = exhaustive_search(&DiscretizedProblem::equispaced(5, 12, spec, p)).unwrap();
        ex_gap = ex_gap.max((ex.utility - best) / best.abs());
    }
    verdict(
        asc_gap <= 1e-3 && ex_gap <= 1e-9,
        format!("ascent rel gap {asc_gap:.2e}, exhaustive excess {ex_gap:.2e}"),
    )
}

fn invariance() -> Verdict {
    let mut g = rng(105);
    let (mut rho_gap, mut scale_gap, mut n) = (0.0f64, 0.0f64, 0);
    while n < 6 {
        let (p, ez) = random_ez(&mut g, 300);
        let (a, b) = (ez.with_rho(0.3), ez.with_rho(0.5));
        if !validate(&a, &p).is_empty() || !validate(&b, &p).is_empty() {
            continue;
        }
        n += 1;
        let (sa, sb) = (solve_ez(&p, &a).unwrap(), solve_ez(&p, &b).unwrap());
        rho_gap = rho_gap.max(sa.plan.rate_distance(&sb.plan));
        for (x, y) in sa.plan.atoms.iter().zip(&sb.plan.atoms) {
            rho_gap = rho_gap.max((x.0 - y.0).abs()).max((x.1 - y.1).abs());
        }
        if sa.plan.atoms.len() != sb.plan.atoms.len() {
            rho_gap = f64::INFINITY;
        }
        let q = MarketParams { y: 2.0 * p.y, w: 2.0 * p.w, ..p };
        let sc = solve_ez(&q, &b).unwrap();
        let scaled: Vec<f64> = sb.plan.rate.iter().map(|x| 2.0 * x).collect();
        for (x, y) in scaled.iter().zip(&sc.plan.rate) {
            scale_gap = scale_gap.max((x - y).abs() / y.abs().max(1.0));
        }
        for (x, y) in sb.plan.atoms.iter().zip(&sc.plan.atoms) {
            scale_gap = scale_gap.max((x.0 - y.0).abs()).max((2.0 * x.1 - y.1).abs() / y.1.max(1.0));
        }
    }
    verdict(
        rho_gap <= 1e-8 && scale_gap <= 1e-9,
        format!("6 instances, ρ 0.3 vs 0.5 diff {rho_gap:.1e}, (y, w)×2 diff {scale_gap:.1e}"),
    )
}

/// Sup rate gap over cells clear of the support boundary.
fn interior_gap(a: &[f64], b: &[f64], p: &MarketParams<f64>, lo: f64, hi: f64) -> f64 {
    let h = p.step();
    (0..p.grid_n)
        .filter(|&k| {
            let touches = |x: f64| x > p.time(k) - h && x < p.time(k + 1) + h && x > 0.0;
            !touches(lo) && !touches(hi)
        })
        .map(|k| (a[k] - b[k]).abs())
        .fold(0.0, f64::max)
}

fn cross_solver() -> Verdict {
    let opts = ConstructorOptions::default();
    let (mut rate, mut ends, mut power, mut ok) = (0.0f64, 0.0f64, 0.0f64, true);
    for (p, ez) in ez_instances(106, 4, 400) {
        let closed = solve_ez(&p, &ez).unwrap();
        let (lo, hi) = closed.consumption_interval();
        let built = solve(&ez_felicity(ez), &p, &opts).unwrap();
        rate = rate.max(interior_gap(&closed.plan.rate, &built.plan.rate, &p, lo, hi));
        let e = (built.t0 - lo).abs().max((built.t1 - hi).abs());
        ends = ends.max(e / p.step());
        ok &= e <= p.step();
        let additive = solve(&power_felicity(1.0 - 1.0 / ez.alpha, ez.delta).unwrap(), &p, &opts).unwrap();
        power = power.max(interior_gap(&closed.plan.rate, &additive.plan.rate, &p, lo, hi));
    }
    verdict(
        ok && rate <= 1e-4 && power <= 1e-5,
        format!("4 instances, EZ rate gap {rate:.1e}, endpoints within {ends:.2} cells, power rate gap {power:.1e}"),
    )
}

fn picard() -> Verdict {
    let desk = [(0.1, 0.5, 1.5), (0.05, 0.3, 2.0), (0.2, 0.6, 1.2), (0.1, 0.8, 0.9), (0.15, 0.7, 0.6)];
    let p = MarketParams::<f64>::new(1.0, 0.05, 1.0, 1.0, 1.0, 200).unwrap();
    let opts = ConstructorOptions::default();
    let mut counts = Vec::new();
    let mut ok = true;
    for (delta, rho_alpha, alpha) in desk {
        let spec = ez_felicity(EzParams::new(delta, rho_alpha / alpha, alpha));
        let m = solve(&spec, &p, &opts).unwrap().m;
        let its = picard_iterate(&spec, &p, m, 50, 1e-6).unwrap();
        ok &= its.last().unwrap().delta < 1e-6;
        counts.push(its.len());
    }
    for spec in [power_felicity(0.5, 0.0).unwrap(), power_felicity(-1.0, 0.2).unwrap()] {
        let its = picard_iterate(&spec, &p, 0.8, 10, 1e-300).unwrap();
        ok &= its.len() >= 2 && its[1].delta == 0.0;
    }
    verdict(ok, format!("EZ iterations to 1e-6 {counts:?}, additive felicities exact at step 2"))
}

fn dp_approximation() -> Verdict {
    let p = MarketParams::<f64>::new(1.0, 0.05, 1.0, 1.0, 1.0, 400).unwrap();
    let ez = EzParams::new(0.1, 0.5, 0.5);
    let spec = ez_felicity(ez);
    let exact = utility0(&solve_ez(&p, &ez).unwrap().plan, &spec, &p).unwrap();
    let full = DpOptions { nt: 50, nx: 40, ny: 40, ..DpOptions::default() };
    let half = DpOptions { nt: 25, nx: 20, ny: 20, ..full.clone() };
    let gap = |o: &DpOptions| {
        let s = iterate_to_convergence(&spec, &p, o).unwrap();
        (s.converged, (s.utility0() - exact) / exact.abs())
    };
    let ((c1, g1), (c2, g2)) = (gap(&half), gap(&full));
    verdict(
        c1 && c2 && g2.abs() <= 0.02 && g2.abs() < g1.abs(),
        format!("gap 25×20×20 {:.3}%, 50×40×40 {:.3}%", 100.0 * g1, 100.0 * g2),
    )
}

fn concavity() -> Verdict {
    let mut g = rng(109);
    let (mut slack, mut drop) = (f64::MAX, 0.0f64);
    for _ in 0..50 {
        let (p, ez) = random_ez(&mut g, 100);
        let spec = ez_felicity(ez);
        let (a, b) = (random_plan(&mut g, &p, 1.0), random_plan(&mut g, &p, 1.0));
        let lam = g.gen_range(0.0..1.0);
        let u = |c: &ConsumptionPlan<f64>| utility0(c, &spec, &p).unwrap();
        let (ua, ub, um) = (u(&a), u(&b), u(&a.mix(&b, lam).unwrap()));
        slack = slack.min(um - lam * ua - (1.0 - lam) * ub);
        let extra = g.gen_range(0.0..0.5);
        let atom = a.with_atom(g.gen_range(0.0..p.horizon), extra).unwrap();
        let mut rate = a.rate.clone();
        rate[g.gen_range(0..p.grid_n)] += extra;
        let spread = ConsumptionPlan::new(p.horizon, p.grid_n, a.atoms.clone(), rate).unwrap();
        drop = drop.max(ua - u(&atom)).max(ua - u(&spread));
    }
    verdict(
        slack >= -1e-9 && drop <= 0.0,
        format!("50 pairs, min mixing slack {slack:.1e}, largest decrease from added mass {drop:.1e}"),
    )
}

fn main() {
    let results = [
        criterion(1, "closed-form utility agreement", secs(5), zero_plan_utility),
        criterion(2, "gradient check", secs(30), gradient_check),
        criterion(3, "KKT audit of closed-form plans", secs(20), kkt_audit),
        criterion(4, "oracle equivalence", secs(60), oracle_equivalence),
        criterion(5, "ρ-invariance and homogeneity", None, invariance),
        criterion(6, "cross-solver consistency", None, cross_solver),
        criterion(7, "Picard convergence", None, picard),
        criterion(8, "DP approximation", secs(300), dp_approximation),
        criterion(9, "concavity and monotonicity", None, concavity),
    ];
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if passed < results.len() {
        std::process::exit(1);
    }
}
