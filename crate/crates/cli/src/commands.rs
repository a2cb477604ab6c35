use hhk_core::constructor::solve as construct;
use hhk_core::dp::{extract_policy_plan, iterate_to_convergence};
use hhk_core::oracle::{compare, exhaustive_search, projected_gradient_ascent, DiscretizedProblem};
use hhk_core::paths::{evaluate, table, utility0, TABLE_COLUMNS};
use hhk_core::{solve_ez, verify_kkt, ConsumptionPlan, EzParams, FelicitySpec, KktReport, MarketParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{parse, set_path, RunConfig};
use crate::output::{event, num, Out};
use crate::CliError;

/// Result of a command: a summary for standard output, plus a verification
/// failure to report after the artifacts are written.
pub struct Outcome {
    pub summary: Value,
    pub failed_check: Option<String>,
}

impl Outcome {
    fn ok(summary: Value) -> Self {
        Outcome { summary, failed_check: None }
    }

    fn check(summary: Value, pass: bool, what: &str) -> Self {
        Outcome { summary, failed_check: (!pass).then(|| what.to_string()) }
    }
}

fn spec(cfg: &RunConfig) -> Result<FelicitySpec<f64>, CliError> {
    cfg.felicity()?.build().map_err(CliError::from)
}

fn ez_params(cfg: &RunConfig) -> Result<EzParams<f64>, CliError> {
    cfg.felicity()?
        .ez_params()
        .ok_or_else(|| CliError::Config("this command needs an epstein-zin felicity".into()))
}

fn plan_table(plan: &ConsumptionPlan<f64>, spec: &FelicitySpec<f64>, p: &MarketParams<f64>) -> Result<Vec<Vec<String>>, CliError> {
    let e = evaluate(plan, spec, p)?;
    Ok(table(plan, &e)?.iter().map(|row| row.iter().map(|x| num(*x)).collect()).collect())
}

fn kkt_summary(r: &KktReport<f64>) -> Value {
    json!({
        "pass": r.pass,
        "multiplier": r.multiplier,
        "budget_gap": r.budget_gap,
        "support_flatness": r.support_flatness,
        "complementarity_gap": r.complementarity_gap,
        "inconclusive": r.inconclusive,
    })
}

pub fn evaluate_cmd(cfg: &RunConfig, out: &mut Out) -> Result<Outcome, CliError> {
    let spec = spec(cfg)?;
    let plan = cfg.plan_or_empty()?;
    let rows = plan_table(&plan, &spec, &cfg.market)?;
    let u0 = utility0(&plan, &spec, &cfg.market)?;
    out.csv("evaluate.csv", &TABLE_COLUMNS, rows)?;
    Ok(Outcome::ok(json!({"u0": u0})))
}

pub fn solve_ez_cmd(cfg: &RunConfig, out: &mut Out) -> Result<Outcome, CliError> {
    let ez = ez_params(cfg)?;
    let spec = hhk_core::ez_felicity(ez);
    let p = &cfg.market;
    let sol = solve_ez(p, &ez)?;
    if sol.assumption_failed {
        event("assumption_failed", json!({"detail": "r + β/α − δ ≤ 0, falling back to immediate consumption"}));
    }
    let e = evaluate(&sol.plan, &spec, p)?;
    let u0 = e.u0();
    let kkt = verify_kkt(&sol.plan, &spec, p, cfg.kkt)?;
    let rows = (0..=p.grid_n).map(|k| {
        let t = p.time(k);
        let cum = sol.plan.cumulative(t).unwrap_or(f64::NAN);
        vec![num(t), num(sol.rate_at(t)), num(cum), num(e.satisfaction.sample.values[k]), num(e.gradient.phi.values[k])]
    });
    out.csv("solve_ez.csv", &["t", "rate", "C_cum", "Y", "Phi"], rows)?;
    out.json("solve_ez.json", &json!({"solution": sol, "u0": u0, "kkt": kkt}))?;
    let summary = json!({"case": sol.case, "tau_bar": sol.tau_bar, "k_star": sol.k_star, "u0": u0, "kkt": kkt_summary(&kkt)});
    Ok(Outcome::check(summary, kkt.pass, "KKT audit of the closed-form plan failed"))
}

pub fn solve_cmd(cfg: &RunConfig, out: &mut Out) -> Result<Outcome, CliError> {
    let spec = spec(cfg)?;
    let p = &cfg.market;
    let sol = construct(&spec, p, &cfg.constructor)?;
    for it in &sol.iterations {
        event("picard", serde_json::to_value(it).unwrap_or(Value::Null));
    }
    let kkt = match &sol.kkt {
        Some(k) => k.clone(),
        None => verify_kkt(&sol.plan, &spec, p, cfg.kkt)?,
    };
    out.csv("solve.csv", &TABLE_COLUMNS, plan_table(&sol.plan, &spec, p)?)?;
    out.json_lines("solve_iterations.jsonl", &sol.iterations)?;
    out.json("solve.json", &json!({"solution": sol, "kkt": kkt}))?;
    let u0 = utility0(&sol.plan, &spec, p)?;
    let summary = json!({
        "M": sol.m, "t0": sol.t0, "t1": sol.t1, "u0": u0, "verified": sol.verified, "kkt": kkt_summary(&kkt),
    });
    Ok(Outcome::check(summary, kkt.pass && sol.verified, "constructed plan failed verification"))
}

pub fn verify_cmd(cfg: &RunConfig, out: &mut Out) -> Result<Outcome, CliError> {
    let spec = spec(cfg)?;
    let plan = cfg.plan_or_empty()?;
    let report = verify_kkt(&plan, &spec, &cfg.market, cfg.kkt)?;
    out.json("kkt.json", &report)?;
    if let Some(why) = &report.inconclusive {
        return Err(CliError::Numerical(format!("audit inconclusive: {why}")));
    }
    Ok(Outcome::check(kkt_summary(&report), report.pass, "KKT conditions violated"))
}

pub fn dp_cmd(cfg: &RunConfig, out: &mut Out) -> Result<Outcome, CliError> {
    let spec = spec(cfg)?;
    let p = &cfg.market;
    let sol = iterate_to_convergence(&spec, p, &cfg.dp)?;
    let h = &sol.history;
    let lines: Vec<Value> = (0..h.deltas.len())
        .map(|i| json!({"n": i + 1, "delta": h.deltas[i], "u0": h.utility0[i]}))
        .collect();
    out.json_lines("dp_history.jsonl", &lines)?;
    for &k in &cfg.output.dp_slices {
        if k >= sol.grid.times.len() {
            return Err(CliError::Config(format!("dp slice {k} beyond nt = {}", cfg.dp.nt)));
        }
        let rows = sol.grid.utility_slice(k, &spec).into_iter().map(|(x, y, u)| vec![num(x), num(y), num(u)]);
        out.csv(&format!("dp_slice_{k}.csv"), &["x", "y", "U"], rows)?;
    }
    let rollout_params = p.with_grid(cfg.dp.nt);
    let rollout = extract_policy_plan(&sol, &spec, &rollout_params, (p.w, p.y))?;
    let rollout_u0 = utility0(&rollout, &spec, &rollout_params)?;
    let mut report = json!({
        "u0": sol.utility0(), "converged": sol.converged, "iterations": sol.iterations(),
        "clamped": h.clamped, "rollout": {"plan": rollout, "u0": rollout_u0},
    });
    if let Some(ez) = cfg.felicity()?.ez_params() {
        let exact = utility0(&solve_ez(p, &ez)?.plan, &spec, p)?;
        report["exact_u0"] = json!(exact);
        report["gap"] = json!((sol.utility0() - exact) / exact.abs());
    }
    out.json("dp.json", &report)?;
    if !sol.converged {
        return Err(CliError::Numerical(format!("value iteration did not converge in {} sweeps", cfg.dp.max_iter)));
    }
    report.as_object_mut().map(|o| o.remove("rollout"));
    Ok(Outcome::ok(report))
}

pub fn oracle_cmd(cfg: &RunConfig, out: &mut Out) -> Result<Outcome, CliError> {
    let spec = spec(cfg)?;
    let p = &cfg.market;
    let (source, candidate) = match cfg.felicity()?.ez_params() {
        Some(ez) => ("solve-ez", solve_ez(p, &ez)?.plan),
        None => ("solve", construct(&spec, p, &cfg.constructor)?.plan),
    };
    let cu = utility0(&candidate, &spec, p)?;
    let uniform = projected_gradient_ascent(p, &spec, None, &cfg.ascent)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rate = (0..p.grid_n).map(|_| rng.gen::<f64>()).collect();
    let start = ConsumptionPlan::new(p.horizon, p.grid_n, vec![], rate)?;
    let random = projected_gradient_ascent(p, &spec, Some(&start), &cfg.ascent)?;
    let prob = DiscretizedProblem::equispaced(cfg.exhaustive.points, cfg.exhaustive.quanta, spec.clone(), *p);
    let brute = exhaustive_search(&prob)?;
    let report = json!({
        "candidate": {"source": source, "u0": cu, "plan": candidate},
        "ascent": {"comparison": compare(uniform.utility, cu), "iterations": uniform.iterations, "stalled": uniform.stalled, "plan": uniform.plan},
        "ascent_random_start": {"comparison": compare(random.utility, cu), "iterations": random.iterations, "plan": random.plan},
        "exhaustive": {"comparison": compare(brute.utility, cu), "points": prob.times, "quanta": prob.quanta, "plan": brute.plan},
    });
    out.json("oracle.json", &report)?;
    let worst = [uniform.utility, random.utility, brute.utility].iter().map(|u| compare(*u, cu).gap).fold(f64::MIN, f64::max);
    let summary = json!({"candidate_u0": cu, "ascent_gap": compare(uniform.utility, cu).gap, "exhaustive_gap": compare(brute.utility, cu).gap});
    Ok(Outcome::check(summary, worst <= 1e-6, "an oracle beat the candidate plan"))
}

/// Cartesian grid over `cfg.sweep`, keys in sorted order.
pub fn sweep_cmd(cfg: &RunConfig, raw: &Value, out: &mut Out) -> Result<Outcome, CliError> {
    if cfg.sweep.is_empty() {
        return Err(CliError::Config("`sweep` needs at least one parameter list".into()));
    }
    let keys: Vec<&String> = cfg.sweep.keys().collect();
    let mut points: Vec<Vec<f64>> = vec![vec![]];
    for k in &keys {
        points = points
            .into_iter()
            .flat_map(|prefix| cfg.sweep[*k].iter().map(move |v| [prefix.clone(), vec![*v]].concat()))
            .collect();
    }
    let mut rows = Vec::with_capacity(points.len());
    let mut failures = 0;
    for values in &points {
        let mut patched = raw.clone();
        for (k, v) in keys.iter().zip(values) {
            set_path(&mut patched, k, json!(v))?;
        }
        let point = parse(&patched)?;
        let ez = ez_params(&point)?;
        let p = &point.market;
        let sol = solve_ez(p, &ez)?;
        let spec = hhk_core::ez_felicity(ez);
        let u0 = utility0(&sol.plan, &spec, p)?;
        let kkt = verify_kkt(&sol.plan, &spec, p, point.kkt)?;
        failures += usize::from(!kkt.pass);
        let mut row: Vec<String> = values.iter().map(|v| num(*v)).collect();
        row.push(serde_json::to_value(sol.case)?.as_str().unwrap_or("").to_string());
        let opt = |x: Option<f64>| x.unwrap_or(f64::NAN);
        row.extend([sol.tau_bar, opt(sol.tau_low), opt(sol.k_star), opt(sol.big_k_star), opt(sol.m_star), sol.gulp, u0].map(num));
        row.push(kkt.pass.to_string());
        rows.push(row);
    }
    let mut header: Vec<&str> = keys.iter().map(|k| k.as_str()).collect();
    header.extend(["case", "tau_bar", "tau_low", "k_star", "K_star", "M_star", "gulp", "u0", "kkt_pass"]);
    out.csv("sweep.csv", &header, rows)?;
    Ok(Outcome::check(json!({"points": points.len(), "kkt_failures": failures}), failures == 0, "KKT audit failed on some sweep points"))
}
