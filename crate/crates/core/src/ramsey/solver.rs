//! Time iteration on the planner conditions over the augmented grid
//! `(K, D/K, mu)` with a homotopy in the labor elasticity parameter.

use std::sync::Arc;

use rayon::prelude::*;

use crate::equilibrium::GridSpec;
use crate::error::{Error, Result};
use crate::first_best::{solve_first_best, FirstBestConfig};
use crate::keyvalue::{fmt_f64, KeyValues};
use crate::model::{ModelParams, ShockChain};
use crate::ramsey::system::{multiplier_scale, ramsey_eval, solve_ramsey_point, DepositBounds, RamseyEval, RamseyNext};
use crate::real::Real;
use crate::spline::{Axis, Grid, SplineField};
use crate::util::geometric_path;

#[derive(Debug, Clone, PartialEq)]
pub struct RamseyConfig {
    pub n_k: usize,
    pub n_d: usize,
    pub n_mu: usize,
    /// Capital bounds as multiples of the reference capital stock.
    pub k_lo: f64,
    pub k_hi: f64,
    /// Bounds of `D/K`.
    pub d_lo: f64,
    pub d_hi: f64,
    /// Bounds of the promised multiplier in units of `(1 - lambda)/(1 + nu)`.
    pub mu_lo: f64,
    pub mu_hi: f64,
    /// Bounds on `D'/K'` (pre-shock capital) faced by the planner.
    pub dprime_lo: f64,
    pub dprime_hi: f64,
    /// First value of `nu` in the homotopy; the target is `params.nu`.
    pub nu_start: f64,
    /// Time-iteration steps over which `nu` moves geometrically to its target.
    pub nu_steps: usize,
    pub damping: f64,
    /// Sup-norm change in the node policies that ends time iteration.
    pub tol: f64,
    pub max_iter: usize,
    pub point_tol: f64,
    /// Sup-norm change that ends policy evaluation of the value.
    pub value_tol: f64,
    pub value_max_iter: usize,
    /// Share of nodes allowed to have no admissible planner point at
    /// convergence; they keep their last values.
    pub max_failure_share: f64,
}

impl Default for RamseyConfig {
    fn default() -> Self {
        RamseyConfig {
            n_k: 8,
            n_d: 10,
            n_mu: 7,
            k_lo: 0.7,
            k_hi: 1.6,
            d_lo: 0.3,
            d_hi: 0.9,
            mu_lo: -0.4,
            mu_hi: 0.4,
            dprime_lo: 0.2,
            dprime_hi: 1.0,
            nu_start: 1000.0,
            nu_steps: 60,
            damping: 0.5,
            tol: 1e-8,
            max_iter: 400,
            point_tol: 1e-12,
            value_tol: 1e-8,
            value_max_iter: 50_000,
            max_failure_share: 0.1,
        }
    }
}

impl RamseyConfig {
    pub fn take_from(kv: &mut KeyValues, prefix: &str) -> Result<Self> {
        let mut c = RamseyConfig::default();
        macro_rules! fields {
            ($($f:ident),+) => {
                $(if let Some(v) = kv.take(&format!("{prefix}{}", stringify!($f)))? {
                    c.$f = v;
                })+
            };
        }
        fields!(
            n_k, n_d, n_mu, k_lo, k_hi, d_lo, d_hi, mu_lo, mu_hi, dprime_lo, dprime_hi, nu_start, nu_steps, damping, tol, max_iter,
            point_tol, value_tol, value_max_iter, max_failure_share
        );
        if !(c.damping > 0.0 && c.damping <= 1.0) {
            return Err(Error::Config(format!("damping {} must lie in (0,1]", c.damping)));
        }
        if !(c.nu_start > 0.0) {
            return Err(Error::Config(format!("nu_start {} must be positive", c.nu_start)));
        }
        Ok(c)
    }

    pub fn to_key_values(&self, prefix: &str) -> KeyValues {
        let mut kv = KeyValues::new();
        let mut set = |k: &str, v: String| kv.set(&format!("{prefix}{k}"), v);
        set("n_k", self.n_k.to_string());
        set("n_d", self.n_d.to_string());
        set("n_mu", self.n_mu.to_string());
        set("k_lo", fmt_f64(self.k_lo));
        set("k_hi", fmt_f64(self.k_hi));
        set("d_lo", fmt_f64(self.d_lo));
        set("d_hi", fmt_f64(self.d_hi));
        set("mu_lo", fmt_f64(self.mu_lo));
        set("mu_hi", fmt_f64(self.mu_hi));
        set("dprime_lo", fmt_f64(self.dprime_lo));
        set("dprime_hi", fmt_f64(self.dprime_hi));
        set("nu_start", fmt_f64(self.nu_start));
        set("nu_steps", self.nu_steps.to_string());
        set("damping", fmt_f64(self.damping));
        set("tol", fmt_f64(self.tol));
        set("max_iter", self.max_iter.to_string());
        set("point_tol", fmt_f64(self.point_tol));
        set("value_tol", fmt_f64(self.value_tol));
        set("value_max_iter", self.value_max_iter.to_string());
        set("max_failure_share", fmt_f64(self.max_failure_share));
        kv
    }

    pub fn grid(&self, p: &ModelParams) -> Result<Arc<Grid>> {
        let k_ref = GridSpec::reference_capital(p);
        Ok(Arc::new(Grid::new(vec![
            Axis::geometric(self.k_lo * k_ref, self.k_hi * k_ref, self.n_k)?,
            Axis::uniform(self.d_lo, self.d_hi, self.n_d)?,
            Axis::uniform(self.mu_lo, self.mu_hi, self.n_mu)?,
        ])?))
    }

    /// `nu` used at time-iteration step `j`.
    pub fn nu_at(&self, target: f64, j: usize) -> f64 {
        if self.nu_steps == 0 || j >= self.nu_steps {
            return target;
        }
        geometric_path(self.nu_start, target, j as f64 / self.nu_steps as f64)
    }

    pub fn bounds(&self) -> DepositBounds {
        DepositBounds {
            lo: self.dprime_lo,
            hi: self.dprime_hi,
        }
    }

    /// The homotopy schedule as a list of `nu` values.
    pub fn nu_schedule(&self, target: f64) -> Vec<f64> {
        (0..=self.nu_steps).map(|j| self.nu_at(target, j)).collect()
    }
}

/// Spline coordinates of a successor `(K, D, mu)`, softly pulled toward the
/// grid; `mu_scale` converts the multiplier to axis units.
#[inline]
pub(crate) fn augmented_coords<T: Real>(grid: &Grid, mu_scale: f64, k: T, d: T, mu: T) -> [T; 3] {
    [
        grid.axis(0).soft_clamp(k),
        grid.axis(1).soft_clamp(d / k),
        grid.axis(2).soft_clamp(mu / mu_scale),
    ]
}

/// Policy splines that act as the continuation: log consumption of both
/// agents, the multiplier and `D'/K`.
#[derive(Debug, Clone)]
pub struct RamseyPolicies {
    pub log_c_w: SplineField,
    pub log_c_e: SplineField,
    pub eta: SplineField,
    pub dn: SplineField,
    /// Multiplier per unit of the third grid axis.
    pub mu_scale: f64,
}

impl RamseyPolicies {
    pub fn grid(&self) -> &Arc<Grid> {
        self.log_c_w.grid()
    }

    pub fn from_node_values(grid: Arc<Grid>, n_shocks: usize, mu_scale: f64, vals: &[[f64; 4]]) -> Result<Self> {
        if let Some(v) = vals.iter().find(|v| !(v[0] > 0.0 && v[1] > 0.0)) {
            return Err(Error::domain("consumption", format!("non-positive node value {v:?}")));
        }
        let col = |f: &dyn Fn(&[f64; 4]) -> f64| vals.iter().map(f).collect::<Vec<_>>();
        Ok(RamseyPolicies {
            log_c_w: SplineField::fit(grid.clone(), n_shocks, &col(&|v| v[0].ln()))?,
            log_c_e: SplineField::fit(grid.clone(), n_shocks, &col(&|v| v[1].ln()))?,
            eta: SplineField::fit(grid.clone(), n_shocks, &col(&|v| v[3]))?,
            dn: SplineField::fit(grid, n_shocks, &col(&|v| v[2]))?,
            mu_scale,
        })
    }

    /// Policy guess at a state, read from the splines.
    pub fn guess(&self, k: f64, d: f64, mu: f64, s: usize) -> [f64; 4] {
        let x = augmented_coords(self.grid(), self.mu_scale, k, d, mu);
        [
            self.log_c_w.value(s, &x).exp(),
            self.log_c_e.value(s, &x).exp(),
            self.dn.value(s, &x),
            self.eta.value(s, &x),
        ]
    }

    pub fn next(&self) -> PolicyNext<'_> {
        PolicyNext { pol: self }
    }
}

pub struct PolicyNext<'a> {
    pol: &'a RamseyPolicies,
}

impl<T: Real> RamseyNext<T> for PolicyNext<'_> {
    #[inline]
    fn next(&mut self, s: usize, k: T, d: T, mu: T) -> (T, T, T) {
        let x = augmented_coords(self.pol.grid(), self.pol.mu_scale, k, d, mu);
        (
            self.pol.log_c_w.value(s, &x).exp(),
            self.pol.log_c_e.value(s, &x).exp(),
            self.pol.eta.value(s, &x),
        )
    }
}

/// State `(shock, K, D, mu)` of node `j` (shock-major).
pub(crate) fn node_state(grid: &Grid, mu_scale: f64, j: usize) -> (usize, f64, f64, f64) {
    let m = grid.size();
    let x = grid.point(j % m);
    (j / m, x[0], x[1] * x[0], x[2] * mu_scale)
}

/// Diagnostics of a Ramsey solve.
#[derive(Debug, Clone, Default)]
pub struct RamseyLog {
    pub nu_schedule: Vec<f64>,
    pub ti_iterations: usize,
    pub ti_changes: Vec<f64>,
    pub point_failures: usize,
    /// False when time iteration stopped at `max_iter`.
    pub converged: bool,
    pub value_iterations: usize,
    pub value_change: f64,
}

/// Time iteration at fixed parameters from `start`; `nu_of` gives the
/// labor parameter at each step. Returns the converged node values.
pub(crate) fn time_iterate(
    p: &ModelParams,
    chain: &ShockChain,
    cfg: &RamseyConfig,
    grid: &Arc<Grid>,
    start: Vec<[f64; 4]>,
    log: &mut RamseyLog,
) -> Result<(RamseyPolicies, Vec<[f64; 4]>)> {
    let ns = chain.len();
    let mut p0 = p.clone();
    p0.nu = cfg.nu_at(p.nu, 0);
    let mut vals = start;
    let mut pol = RamseyPolicies::from_node_values(grid.clone(), ns, multiplier_scale(&p0), &vals)?;
    let omega = cfg.damping;
    for iter in 0..cfg.max_iter {
        let mut pj = p.clone();
        pj.nu = cfg.nu_at(p.nu, iter);
        let solved: Vec<Result<[f64; 4]>> = (0..vals.len())
            .into_par_iter()
            .map(|j| {
                let (s, k, d, mu) = node_state(grid, pol.mu_scale, j);
                let mut next = pol.next();
                solve_ramsey_point(&pj, chain, k, d, mu, s, vals[j], cfg.bounds(), &mut next, cfg.point_tol, 60)
                    .map(|o| o.x)
            })
            .collect();
        let out: Vec<Option<[f64; 4]>> = solved.into_iter().map(|r| r.ok()).collect();
        let failures = out.iter().filter(|o| o.is_none()).count();
        let mut change = 0.0f64;
        for (a, b) in vals.iter_mut().zip(&out) {
            let Some(b) = b else { continue };
            for q in 0..4 {
                let upd = (1.0 - omega) * a[q] + omega * b[q];
                change = change.max((upd - a[q]).abs() / a[q].abs().max(1.0));
                a[q] = upd;
            }
        }
        pol = RamseyPolicies::from_node_values(grid.clone(), ns, multiplier_scale(&pj), &vals)?;
        log.ti_iterations = iter + 1;
        log.ti_changes.push(change);
        log.point_failures = failures;
        if iter >= cfg.nu_steps && failures as f64 <= cfg.max_failure_share * vals.len() as f64 && change < cfg.tol {
            log.converged = true;
            return Ok((pol, vals));
        }
        if failures == vals.len() {
            return Err(Error::convergence(
                "planner time iteration",
                format!("every node failed at iteration {iter} (nu = {})", pj.nu),
            ));
        }
    }
    // Unconverged policies are returned; callers inspect `log.converged`.
    Ok((pol, vals))
}

/// Evaluates the planner conditions at every node with the policies as the
/// continuation and the node values as the unknowns.
pub(crate) fn node_evals(
    p: &ModelParams,
    chain: &ShockChain,
    pol: &RamseyPolicies,
    bounds: DepositBounds,
    vals: &[[f64; 4]],
) -> Vec<RamseyEval<f64>> {
    let grid = pol.grid().clone();
    (0..vals.len())
        .into_par_iter()
        .map(|j| {
            let (s, k, d, mu) = node_state(&grid, pol.mu_scale, j);
            ramsey_eval::<f64>(p, chain, k, d, mu, s, vals[j], bounds, &mut pol.next())
        })
        .collect()
}

/// Policy evaluation of the saddle-point objective:
/// `V = flow + beta E V(K', D', eta)` iterated to a fixed point, followed by
/// the expectation field over pre-shock `(K', D'/K', mu')` per current shock.
pub(crate) fn evaluate_value(
    p: &ModelParams,
    chain: &ShockChain,
    cfg: &RamseyConfig,
    evals: &[RamseyEval<f64>],
    log: &mut RamseyLog,
) -> Result<(SplineField, SplineField)> {
    let grid = cfg.grid(p)?;
    let scale = multiplier_scale(p);
    let m = grid.size();
    let ns = chain.len();
    let n = m * ns;
    // Successor stencils are fixed by the policies.
    let stencils: Vec<Vec<(f64, Vec<(usize, f64)>)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let s = j / m;
            let e = &evals[j];
            chain.p[s]
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(s2, &w)| {
                    let k2 = e.k_next * chain.zeta_values[s2];
                    let st = grid.stencil(&augmented_coords(&grid, scale, k2, e.d_next, e.eta));
                    let taps = (0..st.len).map(|t| (s2 * m + st.idx[t], st.w[t])).collect();
                    (w, taps)
                })
                .collect()
        })
        .collect();
    let flows: Vec<f64> = evals.iter().map(|e| e.flow).collect();
    let mut v: Vec<f64> = flows.iter().map(|f| f / (1.0 - p.beta)).collect();
    let mut field = SplineField::fit(grid.clone(), ns, &v)?;
    let mut change = f64::INFINITY;
    let mut iters = 0;
    while change >= cfg.value_tol {
        if iters >= cfg.value_max_iter {
            return Err(Error::convergence(
                "planner value",
                format!("policy evaluation change {change:.3e} after {iters} iterations"),
            ));
        }
        let coeffs = field.coeffs();
        let new: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|j| {
                let ev: f64 = stencils[j]
                    .iter()
                    .map(|(w, taps)| w * taps.iter().map(|&(c, t)| coeffs[c] * t).sum::<f64>())
                    .sum();
                flows[j] + p.beta * ev
            })
            .collect();
        change = new.iter().zip(&v).fold(0.0f64, |mm, (a, b)| mm.max((a - b).abs()));
        v = new;
        field = SplineField::fit(grid.clone(), ns, &v)?;
        iters += 1;
    }
    log.value_iterations = iters;
    log.value_change = change;
    let ev = expectation_field(chain, scale, &field)?;
    Ok((field, ev))
}

/// `EV(s, K', D'/K', mu') = sum_s' P(s, s') V(s', zeta' K', D'/(zeta' K'), mu')`
/// fitted on the value grid, with `K'` pre-shock.
pub(crate) fn expectation_field(chain: &ShockChain, scale: f64, v: &SplineField) -> Result<SplineField> {
    let grid = v.grid().clone();
    let m = grid.size();
    let ns = chain.len();
    let vals: Vec<f64> = (0..m * ns)
        .into_par_iter()
        .map(|j| {
            let (s, k, d, mu) = node_state(&grid, scale, j);
            chain.p[s]
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(s2, &w)| {
                    let k2 = k * chain.zeta_values[s2];
                    w * v.value(s2, &augmented_coords(&grid, scale, k2, d, mu))
                })
                .sum()
        })
        .collect();
    SplineField::fit(grid, ns, &vals)
}

/// Starting policies at `nu = cfg.nu_start`: the first-best allocation at
/// that labor parameter, zero multiplier, and unchanged deposits.
pub(crate) fn initial_values(p: &ModelParams, cfg: &RamseyConfig, grid: &Grid) -> Result<Vec<[f64; 4]>> {
    let mut p0 = p.clone();
    p0.nu = cfg.nu_at(p.nu, 0);
    let fb_cfg = FirstBestConfig {
        k_lo: (cfg.k_lo * 0.6).min(FirstBestConfig::default().k_lo),
        k_hi: (cfg.k_hi * 1.5).max(FirstBestConfig::default().k_hi),
        ..FirstBestConfig::default()
    };
    let fb = solve_first_best(&p0, &fb_cfg)?;
    let ns = fb.chain.len();
    let m = grid.size();
    (0..m * ns)
        .map(|j| {
            let (s, k, d, _) = node_state(grid, 1.0, j);
            let a = fb.alloc(k, s)?;
            Ok([a.c_w, a.c_e, d / k, 0.0])
        })
        .collect()
}
