//! Acceptance report: one PASS/FAIL line per criterion. The test fails only
//! when the harness itself breaks; criterion outcomes are printed.
//!
//! Run with `cargo test -p macrofin --test acceptance -- --nocapture`.

use std::sync::Arc;
use std::time::Instant;

use macrofin::equilibrium::{solve_equilibrium, EquilibriumSolution, GridSpec, NoTaxes, SolverConfig};
use macrofin::first_best::{solve_first_best, stage_solve, FirstBestConfig, FirstBestSolution};
use macrofin::model::primitives::{capital_price_and_profit_g, capital_production_g, crra_g, production_g};
use macrofin::policy_rules::{optimize_rule, solve_rule_equilibrium, RuleSearchConfig};
use macrofin::ramsey::system::{ramsey_eval, DepositBounds};
use macrofin::ramsey::{solve_ramsey, RamseyConfig, RamseySolution};
use macrofin::real::{Dual, Real};
use macrofin::simulation::{
    draw_shocks, ergodic_stats, identify_crises, matched_comparison, simulate, Regime, SimConfig, SimPath, SimState, Var,
};
use macrofin::spline::{Axis, Grid, SplineField};
use macrofin::welfare::{consumption_equivalent, decentralization_residual, EquilibriumWelfare, PlannerValue};
use macrofin::ModelParams;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    lines: Vec<String>,
}

impl Report {
    fn line(&mut self, n: usize, pass: bool, detail: String) {
        let s = format!("criterion {n:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{s}");
        self.lines.push(s);
    }
}

fn annual_premium(r: f64, rp: f64) -> f64 {
    (r + rp).powi(4) - r.powi(4)
}

fn ce_omega(w: &dyn PlannerValue, k: f64, d: f64, s: usize) -> f64 {
    w.planner_value(k, d, s)
        .and_then(|(v, _)| consumption_equivalent(v, w.params()))
        .unwrap_or(f64::NAN)
}

/// Uniform draws inside the Ramsey state box.
fn ramsey_states(sol: &RamseySolution, n: usize, seed: u64) -> Vec<SimState> {
    let g = sol.grid();
    let (ka, la, ma) = (&g.axes()[0], &g.axes()[1], &g.axes()[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = ka.lo() + (ka.hi() - ka.lo()) * rng.random::<f64>();
            let lev = la.lo() + (la.hi() - la.lo()) * rng.random::<f64>();
            let mu = (ma.lo() + (ma.hi() - ma.lo()) * rng.random::<f64>()) * sol.policies.mu_scale;
            SimState {
                k,
                d: lev * k,
                mu,
                shock: rng.random_range(0..sol.chain.len()),
            }
        })
        .collect()
}

fn small_ramsey() -> RamseyConfig {
    RamseyConfig {
        n_k: 5,
        n_d: 5,
        n_mu: 5,
        max_iter: 150,
        ..RamseyConfig::default()
    }
}

fn criterion_1_and_10(rep: &mut Report, ce: &EquilibriumSolution, ramsey: Option<&RamseySolution>) -> Option<SimPath> {
    let t = Instant::now();
    let path = match simulate(ce, &SimConfig::default()) {
        Ok(p) => p,
        Err(e) => {
            rep.line(1, false, format!("simulation failed: {e}"));
            rep.line(10, false, "no baseline path".into());
            return None;
        }
    };
    let st = ergodic_stats(&path);
    let ok = (1.02..=1.04).contains(&st.mean_r)
        && (0.60..=0.70).contains(&st.mean_leverage)
        && (0.012..=0.017).contains(&st.disaster_prob)
        && (0.003..=0.008).contains(&st.crisis_prob);
    rep.line(
        1,
        ok,
        format!(
            "r={:.4} leverage={:.4} disaster={:.4} crisis={:.4} ({:.0?})",
            st.mean_r,
            st.mean_leverage,
            st.disaster_prob,
            st.crisis_prob,
            t.elapsed()
        ),
    );

    let crises = identify_crises(&path);
    let onset = if crises.windowed.is_empty() {
        f64::NAN
    } else {
        annual_premium(crises.at(0, Var::R), crises.at(0, Var::RiskPremium))
    };
    let mut ok10 = onset > 0.02;
    let mut detail = format!("baseline onset premium {onset:.4} annualized over {} crises", crises.windowed.len());
    match ramsey {
        Some(rs) => {
            let cfg = SimConfig {
                periods: 100_000,
                burn_in: 1_000,
                seed: 3,
            };
            match matched_comparison(ce, rs, &cfg) {
                Ok(m) => {
                    let (pa, pb) = (&m.window_a[macrofin::simulation::WINDOW_PRE], &m.window_b[macrofin::simulation::WINDOW_PRE]);
                    let prem_a = annual_premium(pa[Var::R as usize], pa[Var::RiskPremium as usize]);
                    let prem_b = annual_premium(pb[Var::R as usize], pb[Var::RiskPremium as usize]);
                    let pre = macrofin::simulation::WINDOW_PRE - 1;
                    let drop_a = pa[Var::R as usize] - m.window_a[pre][Var::R as usize];
                    let drop_b = pb[Var::R as usize] - m.window_b[pre][Var::R as usize];
                    ok10 &= prem_b < prem_a && drop_b < drop_a;
                    detail += &format!("; onset premium ramsey {prem_b:.4} vs {prem_a:.4}, rate change ramsey {drop_b:.5} vs {drop_a:.5}");
                }
                Err(e) => {
                    ok10 = false;
                    detail += &format!("; matched comparison failed: {e}");
                }
            }
        }
        None => {
            ok10 = false;
            detail += "; no Ramsey solution";
        }
    }
    rep.line(10, ok10, detail);
    Some(path)
}

fn criterion_2(rep: &mut Report) {
    let p = ModelParams::default();
    let chain = p.shock_chain().unwrap();
    let exact = p.pi_enter / (p.pi_enter + p.pi_exit);
    let gap = (chain.disaster_mass() - exact).abs();
    let n = 1_000_000;
    let shocks = draw_shocks(&chain, chain.median_normal(), n, 11);
    let freq = shocks.iter().filter(|&&s| chain.is_disaster(s)).count() as f64 / n as f64;
    // Two-state persistence inflates the variance of the sample mean.
    let rho = 1.0 - p.pi_enter - p.pi_exit;
    let se = (exact * (1.0 - exact) / n as f64 * (1.0 + rho) / (1.0 - rho)).sqrt();
    rep.line(
        2,
        gap < 1e-10 && (freq - exact).abs() < 3.0 * se,
        format!("closed-form gap {gap:.2e}, frequency {freq:.5} vs {exact:.5} (se {se:.2e})"),
    );
}

fn criterion_3_5_6(rep: &mut Report, rs: &RamseySolution) {
    let states = ramsey_states(rs, 1000, 5);
    let mut tau_k = 0.0f64;
    let mut failed = 0;
    for st in &states {
        match rs.backout_taxes(st.k, st.d, st.mu, st.shock) {
            Ok(t) => tau_k = tau_k.max(t.tau_k.abs()),
            Err(_) => failed += 1,
        }
    }
    rep.line(
        3,
        failed == 0 && tau_k < 1e-5,
        format!("max |tau_k| {tau_k:.3e} over {} states, {failed} unsolved", states.len()),
    );

    let cfg = SimConfig {
        periods: 100_000,
        burn_in: 1_000,
        seed: 9,
    };
    let path = match simulate(rs, &cfg) {
        Ok(p) => p,
        Err(e) => {
            rep.line(5, false, format!("Ramsey simulation failed: {e}"));
            rep.line(6, false, format!("Ramsey simulation failed: {e}"));
            return;
        }
    };
    let state = |t: usize| (path.col(Var::K)[t], path.col(Var::D)[t], path.col(Var::Mu)[t], path.shocks[t]);
    let mut dec = 0.0f64;
    for t in (0..path.len()).step_by(path.len() / 1000) {
        let (k, d, mu, s) = state(t);
        dec = dec.max(decentralization_residual(rs, k, d, mu, s).unwrap_or(f64::INFINITY));
    }
    rep.line(5, dec < 1e-4, format!("max CE residual under backed-out taxes {dec:.3e} at 1000 path states"));
    let mut imp = 0.0f64;
    for t in 0..path.len() {
        let (k, d, mu, s) = state(t);
        imp = imp.max(rs.implementability_residual(k, d, mu, s).map(f64::abs).unwrap_or(f64::INFINITY));
    }
    rep.line(6, imp < 1e-6, format!("max implementability residual {imp:.3e} over {} dates", path.len()));
}

fn criterion_4(rep: &mut Report) {
    let p = ModelParams {
        nu: 1000.0,
        ..ModelParams::default()
    };
    let (fb, rs) = match (
        solve_first_best(&p, &FirstBestConfig::default()),
        solve_ramsey(&p, &RamseyConfig { nu_start: 1000.0, nu_steps: 0, ..small_ramsey() }),
    ) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => {
            rep.line(4, false, format!("solve failed: fb {:?} ramsey {:?}", a.err(), b.err().map(|e| e.to_string())));
            return;
        }
    };
    let states = ramsey_states(&rs, 50, 13);
    let (mut dw, mut td, mut gap) = (0.0f64, 0.0f64, 0.0f64);
    for st in &states {
        dw = dw.max((ce_omega(&rs, st.k, st.d, st.shock) - ce_omega(&fb, st.k, st.d, st.shock)).abs());
        td = td.max(rs.backout_taxes(st.k, st.d, st.mu, st.shock).map(|t| t.tau_d.abs()).unwrap_or(f64::INFINITY));
        gap = gap.max(rs.time_inconsistency_gap(st.k, st.d, st.mu, st.shock).map(f64::abs).unwrap_or(f64::INFINITY));
    }
    rep.line(
        4,
        dw < 1e-3 && td < 1e-4 && gap < 1e-6,
        format!("max |omega_R - omega_FB| {dw:.3e}, max |tau_d| {td:.3e}, max gap {gap:.3e} (converged {})", rs.log.converged),
    );
}

fn criterion_8(rep: &mut Report) {
    let p = ModelParams {
        sigma_eps: 1e-6,
        pi_enter: 0.0,
        ..ModelParams::default()
    };
    let ce = solve_equilibrium(&p, Arc::new(NoTaxes), &SolverConfig::default());
    let rs = solve_ramsey(&p, &small_ramsey());
    let (ce, rs) = match (ce, rs) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => {
            rep.line(8, false, format!("solve failed: ce {:?} ramsey {:?}", a.err(), b.err().map(|e| e.to_string())));
            return;
        }
    };
    let w = match EquilibriumWelfare::new(&ce, "no_policy", 1e-10, 400_000) {
        Ok(w) => w,
        Err(e) => {
            rep.line(8, false, format!("no-policy welfare failed: {e}"));
            return;
        }
    };
    let k = GridSpec::reference_capital(&p);
    let s = ce.chain.median_normal();
    let (mut best, mut at) = (f64::INFINITY, 0.0);
    for j in 0..=40 {
        let d = k * (0.36 + 0.5 * j as f64 / 40.0);
        let g = ce_omega(&rs, k, d, s) - ce_omega(&w, k, d, s);
        if g.abs() < best.abs() || best.is_infinite() {
            best = g;
            at = d / k;
        }
    }
    rep.line(8, best.abs() < 1e-4, format!("gain at the minimizing leverage {at:.3}: {best:.3e}"));
}

fn criterion_7_and_9(rep: &mut Report, ce: &EquilibriumSolution, fb: &FirstBestSolution, rs: Option<&RamseySolution>, path: Option<&SimPath>) {
    let base_res = ce.report.overall_max();
    let sample: Vec<SimState> = match path {
        Some(p) => (0..p.len().min(50_000))
            .map(|t| SimState {
                k: p.col(Var::K)[t],
                d: p.col(Var::D)[t],
                mu: 0.0,
                shock: p.shocks[t],
            })
            .collect(),
        None => vec![ce.initial_state()],
    };
    let cfg = RuleSearchConfig {
        grid_points: 2,
        simplex_max_iter: 4,
        n_states: 50,
        ..RuleSearchConfig::default()
    };
    let rule_sol = optimize_rule(ce, &sample, &cfg).and_then(|o| Ok((o.rule, solve_rule_equilibrium(ce, o.rule)?)));
    let (rule, rule_sol) = match rule_sol {
        Ok(x) => x,
        Err(e) => {
            rep.line(7, false, format!("zero-tax residual {base_res:.3e}; rule optimization failed: {e}"));
            rep.line(9, false, "no optimized rule".into());
            return;
        }
    };
    let rule_res = rule_sol.report.overall_max();
    rep.line(
        7,
        base_res < 1e-5 && rule_res < 1e-5,
        format!(
            "off-grid max residual: zero taxes {base_res:.3e}, rule ({:.4}, {:.4}) {rule_res:.3e}",
            rule.tau_d1, rule.tau_d2
        ),
    );

    let Some(rs) = rs else {
        rep.line(9, false, "no Ramsey solution".into());
        return;
    };
    let (w0, w1) = match (
        EquilibriumWelfare::new(ce, "no_policy", 1e-10, 400_000),
        EquilibriumWelfare::new(&rule_sol, "rule", 1e-10, 400_000),
    ) {
        (Ok(a), Ok(b)) => (a, b),
        _ => {
            rep.line(9, false, "welfare evaluation failed".into());
            return;
        }
    };
    let k = GridSpec::reference_capital(&ce.params);
    let s = ce.chain.median_normal();
    let (mut violation, mut min_share) = (0.0f64, f64::INFINITY);
    for j in 0..=40 {
        let lev = 0.30 + 0.62 * j as f64 / 40.0;
        let d = lev * k;
        let o = [fb as &dyn PlannerValue, rs, &w1, &w0].map(|w| ce_omega(w, k, d, s));
        for i in 0..3 {
            violation = violation.max(o[i + 1] - o[i]);
        }
        if (0.362..=0.858).contains(&lev) {
            min_share = min_share.min((o[2] - o[3]) / (o[1] - o[3]));
        }
    }
    rep.line(
        9,
        violation <= 1e-6 && min_share >= 0.5,
        format!("largest ordering violation {violation:.3e}, smallest captured Ramsey gain share {min_share:.3}"),
    );
}

/// Two-period first-best oracle: terminal value `-A/K'` and a search over
/// total consumption and labor with the efficient consumption split.
fn criterion_11(rep: &mut Report) {
    let p = ModelParams::default();
    let a = 40.0;
    let cont = move |k: f64| (-a / k, a / (k * k));
    let (z, k) = (0.0, GridSpec::reference_capital(&p));
    let alloc = match stage_solve(&p, z, k, &cont, None) {
        Ok(x) => x,
        Err(e) => {
            rep.line(11, false, format!("stage solve failed: {e}"));
            return;
        }
    };
    let lam = p.lambda_weight;
    let share_e = 1.0 / (1.0 + ((1.0 - lam) / lam).powf(1.0 / p.gamma));
    let objective = |c: f64, l: f64| -> f64 {
        let (y, _, _) = production_g(z, k, l, &p);
        let x = (y - c) / k;
        let (phi, _) = capital_production_g(x, &p);
        let k_next = (phi + 1.0 - p.delta) * k;
        let (ue, _) = crra_g(share_e * c, p.gamma);
        let (uw, _) = crra_g((1.0 - share_e) * c, p.gamma);
        let v = lam * ue + (1.0 - lam) * (uw - p.psi * l.powf(1.0 + p.nu) / (1.0 + p.nu)) + p.beta * cont(k_next).0;
        if v.is_finite() { v } else { f64::NEG_INFINITY }
    };
    let (mut c0, mut l0) = (alloc.c_e + alloc.c_w, alloc.l);
    let mut width = 0.5;
    for _ in 0..30 {
        let mut best = (f64::NEG_INFINITY, c0, l0);
        for i in 0..=40 {
            for j in 0..=40 {
                let c = c0 * (1.0 + width * (i as f64 / 20.0 - 1.0));
                let l = l0 * (1.0 + width * (j as f64 / 20.0 - 1.0));
                let v = objective(c, l);
                if v > best.0 {
                    best = (v, c, l);
                }
            }
        }
        (c0, l0) = (best.1, best.2);
        width *= 0.3;
    }
    let dc = ((c0 - alloc.c_e - alloc.c_w) / c0).abs();
    let dl = ((l0 - alloc.l) / l0).abs();
    rep.line(
        11,
        false,
        format!(
            "first best matches search (rel. gaps C {dc:.2e}, L {dl:.2e}: {}); Ramsey stage oracle not implemented",
            if dc < 1e-3 && dl < 1e-3 { "ok" } else { "mismatch" }
        ),
    );
}

fn criterion_12(rep: &mut Report) {
    let p = ModelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-3);
    let fd = |f: &dyn Fn(f64) -> f64, x: f64| {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    };
    for _ in 0..200 {
        let c = 0.2 + 3.0 * rng.random::<f64>();
        let d = crra_g(Dual::<1>::vars([c])[0], p.gamma).0.d[0];
        worst = worst.max(rel(d, fd(&|x| crra_g(x, p.gamma).0, c)));
        let x = 0.01 + 0.1 * rng.random::<f64>();
        let d = capital_production_g(Dual::<1>::vars([x])[0], &p).0.d[0];
        worst = worst.max(rel(d, fd(&|x| capital_production_g(x, &p).0, x)));
        let (k, l) = (5.0 + 20.0 * rng.random::<f64>(), 0.5 + rng.random::<f64>());
        let y = production_g(0.0, Dual::<2>::vars([k, l])[0], Dual::<2>::vars([k, l])[1], &p).0;
        worst = worst.max(rel(y.d[0], fd(&|k| production_g(0.0, k, l, &p).0, k)));
        worst = worst.max(rel(y.d[1], fd(&|l| production_g(0.0, k, l, &p).0, l)));
        let q = capital_price_and_profit_g(Dual::<1>::vars([x])[0], &p).0.d[0];
        worst = worst.max(rel(q, fd(&|x| capital_price_and_profit_g(x, &p).0, x)));
    }
    // Spline derivative against differences of the interpolant.
    let grid = Arc::new(Grid::new(vec![Axis::uniform(0.0, 2.0, 9).unwrap(), Axis::uniform(-1.0, 1.0, 7).unwrap()]).unwrap());
    let vals: Vec<f64> = (0..grid.size()).map(|j| {
        let x = grid.point(j);
        (x[0] * 1.3).sin() * (x[1] + 2.0).ln()
    }).collect();
    let field = SplineField::fit(grid, 1, &vals).unwrap();
    for _ in 0..200 {
        let x = [0.1 + 1.8 * rng.random::<f64>(), -0.9 + 1.8 * rng.random::<f64>()];
        let v = field.value(0, &Dual::<2>::vars(x));
        worst = worst.max(rel(v.d[0], fd(&|a| field.value(0, &[a, x[1]]), x[0])));
        worst = worst.max(rel(v.d[1], fd(&|b| field.value(0, &[x[0], b]), x[1])));
    }
    // Planner residual Jacobian with smooth successors.
    let chain = p.shock_chain().unwrap();
    let kr = GridSpec::reference_capital(&p);
    for _ in 0..20 {
        let s = rng.random_range(0..chain.len());
        let (k, d, mu) = (kr * (0.8 + 0.4 * rng.random::<f64>()), kr * 0.65, 0.02 * (rng.random::<f64>() - 0.5));
        let x = [0.9 * kr * 0.08, 0.1, 0.6, 0.01 * (rng.random::<f64>() - 0.5)];
        fn succ<T: Real>(_s: usize, k: T, d: T, mu: T) -> (T, T, T) {
            (k.powf(0.3) * 0.4 - d * 0.01, k.powf(0.2) * 0.05, mu * 0.9)
        }
        let b = DepositBounds { lo: 0.2, hi: 1.0 };
        let dual = ramsey_eval(&p, &chain, k, d, mu, s, Dual::<4>::vars(x), b, &mut succ::<Dual<4>>);
        for j in 0..4 {
            for i in 0..4 {
                let f = |t: f64| {
                    let mut y = x;
                    y[j] = t;
                    ramsey_eval(&p, &chain, k, d, mu, s, y, b, &mut succ::<f64>).res[i]
                };
                let a = dual.res[i].d[j];
                if a.is_finite() {
                    worst = worst.max(rel(a, fd(&f, x[j])));
                }
            }
        }
    }
    rep.line(12, worst < 1e-5, format!("largest relative derivative error {worst:.2e}"));
}

#[test]
fn acceptance_report() {
    let mut rep = Report { lines: Vec::new() };
    let p = ModelParams::default();
    criterion_2(&mut rep);
    criterion_12(&mut rep);
    criterion_11(&mut rep);
    let t = Instant::now();
    let ce = solve_equilibrium(&p, Arc::new(NoTaxes), &SolverConfig::default()).expect("baseline equilibrium");
    println!("baseline equilibrium solved in {:.0?}", t.elapsed());
    let fb = solve_first_best(&p, &FirstBestConfig::default()).expect("first best");
    let t = Instant::now();
    let rs = solve_ramsey(&p, &small_ramsey());
    println!("Ramsey solve {:.0?}: {:?}", t.elapsed(), rs.as_ref().map(|r| (r.log.converged, r.log.point_failures)).map_err(|e| e.to_string()));
    let rs = rs.ok();
    match &rs {
        Some(r) => criterion_3_5_6(&mut rep, r),
        None => {
            for n in [3, 5, 6] {
                rep.line(n, false, "Ramsey solve failed".into());
            }
        }
    }
    criterion_4(&mut rep);
    let path = criterion_1_and_10(&mut rep, &ce, rs.as_ref());
    criterion_7_and_9(&mut rep, &ce, &fb, rs.as_ref(), path.as_ref());
    criterion_8(&mut rep);
    rep.lines.sort_by_key(|l| l[10..12].trim().parse::<usize>().unwrap_or(0));
    println!("\n==== acceptance summary ====");
    for l in &rep.lines {
        println!("{l}");
    }
    assert_eq!(rep.lines.len(), 12);
}
