//! The social planner's problem over `(K, Z, zeta)`.
//!
//! The planner picks expert and worker consumption, labor and investment to
//! maximize `lambda u_e + (1 - lambda) u_w + beta E V(zeta' K')` subject to
//! the resource constraint. Deposits play no role. The value function is
//! found by iterating on the Bellman operator with cubic splines in `K`; each
//! stage problem is a Newton solve of its four first-order conditions.

use std::sync::Arc;

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::equilibrium::GridSpec;
use crate::error::{Error, Result};
use crate::keyvalue::{fmt_f64, KeyValues};
use crate::model::primitives::{capital_price_and_profit_g, capital_production_g, crra_g, labor_disutility_g, min_investment_ratio, production_g};
use crate::model::{ModelParams, ShockChain};
use crate::simulation::{Record, Regime, SimState};
use crate::spline::{Axis, Grid, SplineField};

#[derive(Debug, Clone, PartialEq)]
pub struct FirstBestConfig {
    pub n_k: usize,
    /// Capital bounds as multiples of the reference capital stock.
    pub k_lo: f64,
    pub k_hi: f64,
    /// Sup-norm change in the value function that ends the iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Policy-evaluation sweeps between stage re-optimizations.
    pub howard_steps: usize,
}

impl Default for FirstBestConfig {
    fn default() -> Self {
        FirstBestConfig {
            n_k: 48,
            k_lo: 0.3,
            k_hi: 3.2,
            tol: 1e-8,
            max_iter: 5000,
            howard_steps: 20,
        }
    }
}

impl FirstBestConfig {
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("n_k", self.n_k);
        kv.set("k_lo", fmt_f64(self.k_lo));
        kv.set("k_hi", fmt_f64(self.k_hi));
        kv.set("tol", fmt_f64(self.tol));
        kv.set("max_iter", self.max_iter);
        kv.set("howard_steps", self.howard_steps);
        kv
    }

    pub fn take_from(kv: &mut KeyValues) -> Result<Self> {
        let d = Self::default();
        Ok(FirstBestConfig {
            n_k: kv.take("n_k")?.unwrap_or(d.n_k),
            k_lo: kv.take("k_lo")?.unwrap_or(d.k_lo),
            k_hi: kv.take("k_hi")?.unwrap_or(d.k_hi),
            tol: kv.take("tol")?.unwrap_or(d.tol),
            max_iter: kv.take("max_iter")?.unwrap_or(d.max_iter),
            howard_steps: kv.take("howard_steps")?.unwrap_or(d.howard_steps),
        })
    }

    fn grid(&self, p: &ModelParams) -> Result<Arc<Grid>> {
        if !(self.k_lo > 0.0 && self.k_hi > self.k_lo && self.n_k >= 4) {
            return Err(Error::Config(format!("invalid first-best grid {self:?}")));
        }
        let k_ref = GridSpec::reference_capital(p);
        Ok(Arc::new(Grid::new(vec![Axis::geometric(self.k_lo * k_ref, self.k_hi * k_ref, self.n_k)?])?))
    }
}

/// Allocation chosen at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerAlloc {
    pub c_e: f64,
    pub c_w: f64,
    pub l: f64,
    pub i: f64,
    pub y: f64,
    /// Pre-shock next-period capital.
    pub k_next: f64,
    /// Marginal value of goods, `(1 - lambda) u_wc = lambda u_ec`.
    pub m: f64,
    /// Flow objective `lambda u_e + (1 - lambda) u_w`.
    pub flow: f64,
}

impl PlannerAlloc {
    /// Shadow value of capital implied by the stage conditions:
    /// `M (R + (1 - delta) q + Pi)`.
    pub fn shadow_capital_value(&self, k: f64, p: &ModelParams) -> f64 {
        let (q, pi) = capital_price_and_profit_g(self.i / k, p);
        self.m * (p.alpha * self.y / k + (1.0 - p.delta) * q + pi)
    }
}

fn flow_value(c_e: f64, c_w: f64, l: f64, p: &ModelParams) -> f64 {
    let lam = p.lambda_weight;
    let (ue, _) = crra_g(c_e, p.gamma);
    let (uw, _) = crra_g(c_w, p.gamma);
    let (v, _) = labor_disutility_g(l, p);
    lam * ue + (1.0 - lam) * (uw - v)
}

/// FOC residuals in `y = [ln C_e, ln C_w, ln L, I/K]`.
fn stage_residuals(y: &[f64; 4], z: f64, k: f64, p: &ModelParams, cont: &dyn Fn(f64) -> (f64, f64)) -> Option<[f64; 4]> {
    let lam = p.lambda_weight;
    let (c_e, c_w, l, x) = (y[0].exp(), y[1].exp(), y[2].exp(), y[3]);
    if x <= min_investment_ratio(p) {
        return None;
    }
    let (out, _, w) = production_g(z, k, l, p);
    let (phi, dphi) = capital_production_g(x, p);
    let k_next = k * (phi + 1.0 - p.delta);
    let (_, wk) = cont(k_next);
    if !(wk > 0.0 && k_next > 0.0) {
        return None;
    }
    Some([
        (lam / (1.0 - lam)).ln() - p.gamma * y[0] + p.gamma * y[1],
        p.psi.ln() + p.nu * y[2] + p.gamma * y[1] - w.ln(),
        (out - x * k - c_e - c_w) / out,
        ((1.0 - lam) * c_w.powf(-p.gamma)).ln() - (p.beta * dphi * wk).ln(),
    ])
}

/// Solves the planner's stage problem at `(K, z)` given the continuation
/// `cont(K') = (E V(zeta' K'), d/dK' E V)` over pre-shock capital.
pub fn stage_solve(
    p: &ModelParams,
    z: f64,
    k: f64,
    cont: &dyn Fn(f64) -> (f64, f64),
    guess: Option<&PlannerAlloc>,
) -> Result<PlannerAlloc> {
    let mut y = match guess {
        Some(g) => [g.c_e.ln(), g.c_w.ln(), g.l.ln(), g.i / k],
        None => static_guess(p, z, k),
    };
    match newton(p, z, k, cont, y) {
        Ok(a) => Ok(a),
        Err(_) => {
            y = bracketed(p, z, k, cont)?;
            newton(p, z, k, cont, y)
        }
    }
}

/// Static conditions given the investment ratio: risk sharing, the labor
/// margin and the resource constraint. Returns `y` or `None` if `x` leaves
/// nothing to consume.
fn static_given_x(p: &ModelParams, z: f64, k: f64, x: f64) -> Option<[f64; 4]> {
    let lam = p.lambda_weight;
    let kappa = (lam / (1.0 - lam)).powf(1.0 / p.gamma);
    let c_w = |ll: f64| (production_g(z, k, ll.exp(), p).0 - x * k) / (1.0 + kappa);
    let h = |ll: f64| {
        let (_, _, w) = production_g(z, k, ll.exp(), p);
        p.psi.ln() + p.nu * ll + p.gamma * c_w(ll).max(1e-300).ln() - w.ln()
    };
    // Output must exceed investment: L > (xK / (e^z K^alpha))^(1/(1-alpha)).
    let lo = if x > 0.0 {
        ((x * k).ln() - z - p.alpha * k.ln()) / (1.0 - p.alpha) + 1e-12
    } else {
        -40.0
    };
    let mut hi = lo.max(-40.0) + 1.0;
    while h(hi) < 0.0 {
        hi += 2.0;
        if hi > 60.0 {
            return None;
        }
    }
    let mut conv = roots::SimpleConvergency { eps: 1e-15, max_iter: 200 };
    let ll = roots::find_root_brent(lo, hi, h, &mut conv).ok()?;
    let cw = c_w(ll);
    (cw > 0.0).then(|| [(kappa * cw).ln(), cw.ln(), ll, x])
}

/// Robust fallback: brackets the investment Euler condition in `I/K` with
/// the static conditions imposed exactly.
fn bracketed(p: &ModelParams, z: f64, k: f64, cont: &dyn Fn(f64) -> (f64, f64)) -> Result<[f64; 4]> {
    let fail = || Error::convergence("first-best stage", format!("cannot bracket investment at K={k}, z={z}"));
    let g = |x: f64| -> f64 {
        match static_given_x(p, z, k, x).and_then(|y| stage_residuals(&y, z, k, p, cont)) {
            Some(r) => r[3],
            // Infeasible from above: consumption exhausted.
            None => f64::INFINITY,
        }
    };
    let x_min = min_investment_ratio(p);
    let mut a = p.delta;
    let mut b = p.delta;
    let ga = g(a);
    if !ga.is_finite() {
        // Even maintenance investment exhausts output: search downward.
        b = a;
        a = 0.5 * (a + x_min);
        while !(g(a) < 0.0) {
            b = a;
            a = 0.5 * (a + x_min);
            if a - x_min < 1e-12 {
                return Err(fail());
            }
        }
    } else if ga < 0.0 {
        let mut step = 0.01;
        while g(b) < 0.0 {
            a = b;
            b += step;
            step *= 2.0;
            if b > 10.0 {
                return Err(fail());
            }
        }
    } else {
        while !(g(a) < 0.0) {
            b = a;
            a = 0.5 * (a + x_min);
            if a - x_min < 1e-12 {
                return Err(fail());
            }
        }
    }
    // Shrink an infinite upper end until it is finite.
    while !g(b).is_finite() {
        let mid = 0.5 * (a + b);
        if g(mid) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-14 {
            return Err(fail());
        }
    }
    let mut conv = roots::SimpleConvergency { eps: 1e-14, max_iter: 200 };
    let x = roots::find_root_brent(a, b, g, &mut conv).map_err(|_| fail())?;
    static_given_x(p, z, k, x).ok_or_else(fail)
}

fn newton(p: &ModelParams, z: f64, k: f64, cont: &dyn Fn(f64) -> (f64, f64), mut y: [f64; 4]) -> Result<PlannerAlloc> {
    let norm = |r: &[f64; 4]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut res = stage_residuals(&y, z, k, p, cont)
        .ok_or_else(|| Error::domain("first-best stage", format!("infeasible guess at K={k}, z={z}")))?;
    for _ in 0..100 {
        if norm(&res) < 1e-13 {
            break;
        }
        let mut jac = nalgebra::Matrix4::<f64>::zeros();
        for j in 0..4 {
            let h = 1e-7 * (1.0 + y[j].abs());
            let (mut yp, mut ym) = (y, y);
            yp[j] += h;
            ym[j] -= h;
            let (Some(rp), Some(rm)) = (stage_residuals(&yp, z, k, p, cont), stage_residuals(&ym, z, k, p, cont)) else {
                return Err(Error::domain("first-best stage", format!("Jacobian left the domain at K={k}, z={z}")));
            };
            for i in 0..4 {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rhs = nalgebra::Vector4::from_column_slice(&res);
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::convergence("first-best stage", format!("singular Jacobian at K={k}, z={z}")))?;
        let mut t = 1.0;
        loop {
            let mut trial = y;
            for i in 0..4 {
                trial[i] -= t * step[i].clamp(-1.0, 1.0);
            }
            match stage_residuals(&trial, z, k, p, cont) {
                Some(r) if norm(&r) < (1.0 - 1e-4 * t) * norm(&res) || t < 1e-3 => {
                    y = trial;
                    res = r;
                    break;
                }
                _ if t < 1e-6 => {
                    return Err(Error::convergence("first-best stage", format!("line search failed at K={k}, z={z}")));
                }
                _ => t *= 0.5,
            }
        }
    }
    if !(norm(&res) < 1e-10) {
        return Err(Error::convergence(
            "first-best stage",
            format!("residual {:.2e} at K={k}, z={z}", norm(&res)),
        ));
    }
    Ok(alloc_from(&y, z, k, p))
}

fn alloc_from(y: &[f64; 4], z: f64, k: f64, p: &ModelParams) -> PlannerAlloc {
    let (c_e, c_w, l, x) = (y[0].exp(), y[1].exp(), y[2].exp(), y[3]);
    let (out, _, _) = production_g(z, k, l, p);
    let (phi, _) = capital_production_g(x, p);
    PlannerAlloc {
        c_e,
        c_w,
        l,
        i: x * k,
        y: out,
        k_next: k * (phi + 1.0 - p.delta),
        m: (1.0 - p.lambda_weight) * c_w.powf(-p.gamma),
        flow: flow_value(c_e, c_w, l, p),
    }
}

/// Allocation with `I = min(delta K, 0.3 Y)`, efficient risk sharing and the efficient
/// labor margin; used to start the iteration.
fn static_guess(p: &ModelParams, z: f64, k: f64) -> [f64; 4] {
    let lam = p.lambda_weight;
    let kappa = (lam / (1.0 - lam)).powf(1.0 / p.gamma);
    let invest = |out: f64| (p.delta * k).min(0.3 * out);
    let mut l: f64 = 1.0;
    // Fixed point in L: psi L^nu C_w^gamma = W with C_w = (Y - I)/(1 + kappa).
    for _ in 0..200 {
        let (out, _, w) = production_g(z, k, l, p);
        let c_w = (out - invest(out)) / (1.0 + kappa);
        let target = (w / (p.psi * c_w.powf(p.gamma))).powf(1.0 / p.nu);
        l = 0.5 * l + 0.5 * target;
    }
    let (out, _, _) = production_g(z, k, l, p);
    let x = invest(out) / k;
    let c_w = (out - invest(out)) / (1.0 + kappa);
    [(kappa * c_w).ln(), c_w.ln(), l.ln(), x]
}

#[derive(Debug, Clone)]
pub struct FirstBestSolution {
    pub params: ModelParams,
    pub chain: ShockChain,
    pub config: FirstBestConfig,
    /// Planner value `V_sp(K, s)`.
    pub v: SplineField,
    /// Expectation `E[V_sp(zeta' K', s') | s]` over pre-shock `K'`.
    pub ev: SplineField,
    pub c_w: SplineField,
    pub c_e: SplineField,
    pub l: SplineField,
    pub i: SplineField,
    pub iterations: usize,
    /// Sup-norm value change per iteration.
    pub trace: Vec<f64>,
}

/// Expectation field `E[V(zeta' K', s') | s]` sampled at the grid nodes.
fn expectation(v: &SplineField, chain: &ShockChain) -> Result<SplineField> {
    let grid = v.grid().clone();
    let n = chain.len();
    SplineField::from_fn(grid, n, |s, x| {
        chain.p[s]
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(s2, w)| w * v.value(s2, &[chain.zeta_values[s2] * x[0]]))
            .sum()
    })
}

fn continuation(ev: &SplineField, s: usize) -> impl Fn(f64) -> (f64, f64) + '_ {
    move |kn: f64| {
        let d = crate::real::Dual::<1>::var(kn, 0);
        let v = ev.value(s, &[d]);
        (v.v, v.d[0])
    }
}

pub fn solve_first_best(p: &ModelParams, cfg: &FirstBestConfig) -> Result<FirstBestSolution> {
    p.validate()?;
    let chain = p.shock_chain()?;
    let grid = cfg.grid(p)?;
    let n = chain.len();
    let m = grid.size();
    let nodes: Vec<(usize, f64)> = (0..n).flat_map(|s| (0..m).map(move |i| (s, i))).map(|(s, i)| (s, grid.point(i)[0])).collect();

    // Start from the value of repeating the static allocation forever.
    let mut allocs: Vec<PlannerAlloc> = nodes
        .iter()
        .map(|&(s, k)| alloc_from(&static_guess(p, chain.z_values[s], k), chain.z_values[s], k, p))
        .collect();
    let mut values: Vec<f64> = allocs.iter().map(|a| a.flow / (1.0 - p.beta)).collect();
    let mut v = SplineField::fit(grid.clone(), n, &values)?;
    let mut ev = expectation(&v, &chain)?;
    let mut trace = Vec::new();
    let mut first = true;

    for iter in 0..cfg.max_iter {
        let solved: Vec<Result<PlannerAlloc>> = nodes
            .par_iter()
            .zip(allocs.par_iter())
            .map(|(&(s, k), a)| {
                let cont = continuation(&ev, s);
                stage_solve(p, chain.z_values[s], k, &cont, if first { None } else { Some(a) })
            })
            .collect();
        first = false;
        let mut next = Vec::with_capacity(nodes.len());
        for (r, &(s, k)) in solved.into_iter().zip(&nodes) {
            next.push(r.map_err(|e| Error::convergence("first-best iteration", format!("iteration {iter}, shock {s}, K={k}: {e}")))?);
        }
        allocs = next;
        // Policy evaluation sweeps with the allocation held fixed.
        let mut new_values = values.clone();
        for _ in 0..=cfg.howard_steps {
            new_values = nodes
                .iter()
                .zip(&allocs)
                .map(|(&(s, _), a)| a.flow + p.beta * ev.value(s, &[a.k_next]))
                .collect();
            v = SplineField::fit(grid.clone(), n, &new_values)?;
            ev = expectation(&v, &chain)?;
        }
        let change = values
            .iter()
            .zip(&new_values)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        values = new_values;
        trace.push(change);
        if !change.is_finite() {
            return Err(Error::convergence("first-best iteration", format!("non-finite value at iteration {iter}")));
        }
        if change < cfg.tol {
            return assemble(p, chain, cfg, grid, v, ev, &allocs, iter + 1, trace);
        }
    }
    let tail: Vec<String> = trace.iter().rev().take(5).map(|c| format!("{c:.2e}")).collect();
    Err(Error::convergence(
        "first-best iteration",
        format!("no convergence after {} iterations; last sup-norm changes {}", cfg.max_iter, tail.join(", ")),
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    p: &ModelParams,
    chain: ShockChain,
    cfg: &FirstBestConfig,
    grid: Arc<Grid>,
    v: SplineField,
    ev: SplineField,
    allocs: &[PlannerAlloc],
    iterations: usize,
    trace: Vec<f64>,
) -> Result<FirstBestSolution> {
    let n = chain.len();
    let field = |f: fn(&PlannerAlloc) -> f64| SplineField::fit(grid.clone(), n, &allocs.iter().map(f).collect::<Vec<_>>());
    Ok(FirstBestSolution {
        params: p.clone(),
        c_w: field(|a| a.c_w)?,
        c_e: field(|a| a.c_e)?,
        l: field(|a| a.l)?,
        i: field(|a| a.i)?,
        chain,
        config: cfg.clone(),
        v,
        ev,
        iterations,
        trace,
    })
}

impl FirstBestSolution {
    pub fn in_hull(&self, k: f64) -> bool {
        self.v.grid().contains(&[k])
    }

    /// Planner value at `(K, D, s)`; `D` is ignored. The flag reports a
    /// state outside the capital grid.
    pub fn value(&self, k: f64, _d: f64, shock: usize) -> (f64, bool) {
        (self.v.value(shock, &[k]), !self.in_hull(k))
    }

    /// Re-solves the stage problem at an arbitrary state.
    pub fn alloc(&self, k: f64, shock: usize) -> Result<PlannerAlloc> {
        let guess = PlannerAlloc {
            c_e: self.c_e.value(shock, &[k]).max(1e-8),
            c_w: self.c_w.value(shock, &[k]).max(1e-8),
            l: self.l.value(shock, &[k]).max(1e-8),
            i: self.i.value(shock, &[k]),
            y: 0.0,
            k_next: 0.0,
            m: 0.0,
            flow: 0.0,
        };
        let cont = continuation(&self.ev, shock);
        stage_solve(&self.params, self.chain.z_values[shock], k, &cont, Some(&guess))
            .or_else(|_| stage_solve(&self.params, self.chain.z_values[shock], k, &cont, None))
    }

    /// Bellman residual `|V - max{flow + beta E V'}|` at `(K, s)`.
    pub fn bellman_residual(&self, k: f64, shock: usize) -> Result<f64> {
        let a = self.alloc(k, shock)?;
        Ok((self.v.value(shock, &[k]) - a.flow - self.params.beta * self.ev.value(shock, &[a.k_next])).abs())
    }

    /// Relative gap between the spline slope `dV/dK` and the stage shadow
    /// value of capital.
    pub fn envelope_gap(&self, k: f64, shock: usize) -> Result<f64> {
        let a = self.alloc(k, shock)?;
        let slope = self.v.value(shock, &[crate::real::Dual::<1>::var(k, 0)]).d[0];
        let shadow = a.shadow_capital_value(k, &self.params);
        Ok((slope - shadow).abs() / shadow.abs())
    }

    /// Riskless rate that would clear a deposit market with these
    /// allocations: `u_wc / (beta E u_wc')`.
    pub fn shadow_rate(&self, a: &PlannerAlloc, shock: usize) -> Result<f64> {
        let mut e_uw = 0.0;
        for (s2, &w) in self.chain.p[shock].iter().enumerate() {
            if w > 0.0 {
                let a2 = self.alloc(self.chain.zeta_values[s2] * a.k_next, s2)?;
                e_uw += w * a2.c_w.powf(-self.params.gamma);
            }
        }
        Ok(a.c_w.powf(-self.params.gamma) / (self.params.beta * e_uw))
    }

    pub fn meta(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.extend(&self.params.to_key_values(), "param.");
        kv.extend(&self.config.to_key_values(), "solver.");
        kv.set("params_hash", self.params.hash());
        kv.set("iterations", self.iterations);
        kv.set("final_change", fmt_f64(self.trace.last().copied().unwrap_or(f64::NAN)));
        kv
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new("first-best", self.meta());
        for (name, f) in [
            ("V", &self.v),
            ("EV", &self.ev),
            ("C_w", &self.c_w),
            ("C_e", &self.c_e),
            ("L", &self.l),
            ("I", &self.i),
        ] {
            c.push(name, f);
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind("first-best")?;
        let mut meta = c.meta.clone();
        let mut pk = meta.take_prefixed("param.");
        let params = ModelParams::take_from(&mut pk)?;
        pk.finish()?;
        let mut sk = meta.take_prefixed("solver.");
        let config = FirstBestConfig::take_from(&mut sk)?;
        sk.finish()?;
        let iterations = meta.take::<usize>("iterations")?.unwrap_or(0);
        let last = meta.take::<f64>("final_change")?.unwrap_or(f64::NAN);
        Ok(FirstBestSolution {
            chain: params.shock_chain()?,
            params,
            config,
            v: c.field("V")?,
            ev: c.field("EV")?,
            c_w: c.field("C_w")?,
            c_e: c.field("C_e")?,
            l: c.field("L")?,
            i: c.field("I")?,
            iterations,
            trace: vec![last],
        })
    }
}

impl Regime for FirstBestSolution {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn chain(&self) -> &ShockChain {
        &self.chain
    }

    fn label(&self) -> String {
        "first-best".to_string()
    }

    fn initial_state(&self) -> SimState {
        SimState {
            k: GridSpec::reference_capital(&self.params),
            d: 0.0,
            mu: 0.0,
            shock: self.chain.median_normal(),
        }
    }

    /// Decentralized with zero deposits: workers consume their wage net of a
    /// lump-sum transfer to experts.
    fn step(&self, st: &SimState) -> Result<Record> {
        let a = self.alloc(st.k, st.shock)?;
        let p = &self.params;
        let (q, _) = capital_price_and_profit_g(a.i / st.k, p);
        let r = self.shadow_rate(&a, st.shock)?;
        let mut e_ret = 0.0;
        for (s2, &w) in self.chain.p[st.shock].iter().enumerate() {
            if w > 0.0 {
                let zeta = self.chain.zeta_values[s2];
                let k2 = zeta * a.k_next;
                let a2 = self.alloc(k2, s2)?;
                let (q2, pi2) = capital_price_and_profit_g(a2.i / k2, p);
                e_ret += w * zeta * (p.alpha * a2.y / k2 + (1.0 - p.delta) * q2 + pi2);
            }
        }
        Ok(Record {
            c_w: a.c_w,
            c_e: a.c_e,
            l: a.l,
            i: a.i,
            y: a.y,
            r,
            q,
            tau_l: 0.0,
            tau_d: 0.0,
            tau_k: 0.0,
            transfer: (1.0 - p.alpha) * a.y - a.c_w,
            expected_return: e_ret / q,
            k_next: a.k_next,
            d_next: 0.0,
            mu_next: 0.0,
            extrapolated: !self.in_hull(st.k),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FirstBestConfig {
        FirstBestConfig {
            n_k: 24,
            ..FirstBestConfig::default()
        }
    }

    #[test]
    fn static_guess_satisfies_static_conditions() {
        let p = ModelParams::default();
        let k = GridSpec::reference_capital(&p);
        let y = static_guess(&p, 0.0, k);
        let r = stage_residuals(&y, 0.0, k, &p, &|_| (0.0, 1.0)).unwrap();
        assert!(r[0].abs() < 1e-12 && r[1].abs() < 1e-10 && r[2].abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn symmetric_weights_equalize_consumption() {
        let p = ModelParams {
            lambda_weight: 0.5,
            ..ModelParams::default()
        };
        let sol = solve_first_best(&p, &small()).unwrap();
        let k_ref = GridSpec::reference_capital(&p);
        for s in 0..sol.chain.len() {
            let a = sol.alloc(k_ref, s).unwrap();
            assert!((a.c_e - a.c_w).abs() < 1e-10 * a.c_w);
        }
    }
}
