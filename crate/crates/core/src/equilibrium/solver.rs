//! Time iteration, sparse Newton polish and parameter homotopy for the
//! competitive equilibrium.
//!
//! Policies live on a tensor grid over `(K, D/K)`; the deposit coordinate
//! is scaled by capital so that every grid node is an economically feasible
//! state.

use std::sync::Arc;

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use rayon::prelude::*;

use crate::equilibrium::steady::deterministic_steady_state;
use crate::equilibrium::system::{labor_supply, point_eval, solve_point, NextAllocation};
use crate::equilibrium::taxes::TaxSchedule;
use crate::error::{Error, Result};
use crate::keyvalue::{fmt_f64, KeyValues};
use crate::model::{ModelParams, ShockChain};
use crate::real::{Dual, Real};
use crate::spline::{Axis, Grid, SplineField};
use crate::util::{geometric_path, sup_norm};

/// Collocation grid over `(K, D/K)`. Capital bounds are multiples of the
/// deterministic steady-state capital stock.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub n_k: usize,
    pub n_d: usize,
    pub k_lo: f64,
    pub k_hi: f64,
    pub d_lo: f64,
    pub d_hi: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_k: 12,
            n_d: 24,
            k_lo: 0.6,
            k_hi: 1.4,
            d_lo: 0.30,
            d_hi: 0.92,
        }
    }
}

/// Leverage at which the reference steady state is evaluated.
pub const REFERENCE_LEVERAGE: f64 = 0.65;

impl GridSpec {
    pub fn reference_capital(p: &ModelParams) -> f64 {
        deterministic_steady_state(p, REFERENCE_LEVERAGE).k
    }

    pub fn build(&self, p: &ModelParams) -> Result<Arc<Grid>> {
        if !(self.k_lo > 0.0 && self.k_hi > self.k_lo && self.d_hi > self.d_lo) {
            return Err(Error::Config(format!("invalid grid bounds {self:?}")));
        }
        let k_ref = Self::reference_capital(p);
        Ok(Arc::new(Grid::new(vec![
            Axis::geometric(self.k_lo * k_ref, self.k_hi * k_ref, self.n_k)?,
            Axis::uniform(self.d_lo, self.d_hi, self.n_d)?,
        ])?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub grid: GridSpec,
    /// Number of homotopy steps after the initial easy parametrization.
    pub homotopy_stages: usize,
    pub sigma_start: f64,
    pub gamma_start: f64,
    pub xi_start: f64,
    pub damping: f64,
    pub ti_tol: f64,
    pub ti_max_iter: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Time-iteration steps between Newton attempts.
    pub newton_every: usize,
    pub point_tol: f64,
    /// Off-grid test points per collocation point in the residual report.
    pub check_density: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grid: GridSpec::default(),
            homotopy_stages: 5,
            sigma_start: 1e-4,
            gamma_start: 1.0,
            xi_start: 1.0,
            damping: 0.5,
            ti_tol: 1e-9,
            ti_max_iter: 4000,
            newton_tol: 1e-10,
            newton_max_iter: 12,
            newton_every: 10,
            point_tol: 1e-12,
            check_density: 10,
        }
    }
}

impl SolverConfig {
    pub fn take_from(kv: &mut KeyValues, prefix: &str) -> Result<Self> {
        let mut c = SolverConfig::default();
        macro_rules! field {
            ($($path:ident).+, $key:literal) => {
                if let Some(v) = kv.take(&format!("{prefix}{}", $key))? {
                    c.$($path).+ = v;
                }
            };
        }
        field!(grid.n_k, "n_k");
        field!(grid.n_d, "n_d");
        field!(grid.k_lo, "k_lo");
        field!(grid.k_hi, "k_hi");
        field!(grid.d_lo, "d_lo");
        field!(grid.d_hi, "d_hi");
        field!(homotopy_stages, "homotopy_stages");
        field!(sigma_start, "sigma_start");
        field!(gamma_start, "gamma_start");
        field!(xi_start, "xi_start");
        field!(damping, "damping");
        field!(ti_tol, "ti_tol");
        field!(ti_max_iter, "ti_max_iter");
        field!(newton_tol, "newton_tol");
        field!(newton_max_iter, "newton_max_iter");
        field!(newton_every, "newton_every");
        field!(point_tol, "point_tol");
        field!(check_density, "check_density");
        if !(c.damping > 0.0 && c.damping <= 1.0) {
            return Err(Error::Config(format!("damping {} must lie in (0,1]", c.damping)));
        }
        Ok(c)
    }

    pub fn to_key_values(&self, prefix: &str) -> KeyValues {
        let mut kv = KeyValues::new();
        let mut set = |k: &str, v: String| kv.set(&format!("{prefix}{k}"), v);
        set("n_k", self.grid.n_k.to_string());
        set("n_d", self.grid.n_d.to_string());
        set("k_lo", fmt_f64(self.grid.k_lo));
        set("k_hi", fmt_f64(self.grid.k_hi));
        set("d_lo", fmt_f64(self.grid.d_lo));
        set("d_hi", fmt_f64(self.grid.d_hi));
        set("homotopy_stages", self.homotopy_stages.to_string());
        set("sigma_start", fmt_f64(self.sigma_start));
        set("gamma_start", fmt_f64(self.gamma_start));
        set("xi_start", fmt_f64(self.xi_start));
        set("damping", fmt_f64(self.damping));
        set("ti_tol", fmt_f64(self.ti_tol));
        set("ti_max_iter", self.ti_max_iter.to_string());
        set("newton_tol", fmt_f64(self.newton_tol));
        set("newton_max_iter", self.newton_max_iter.to_string());
        set("newton_every", self.newton_every.to_string());
        set("point_tol", fmt_f64(self.point_tol));
        set("check_density", self.check_density.to_string());
        kv
    }

    /// Parameters of homotopy stage `j` (stage `homotopy_stages` is the
    /// target).
    pub fn stage_params(&self, target: &ModelParams, j: usize) -> ModelParams {
        let t = if self.homotopy_stages == 0 {
            1.0
        } else {
            j as f64 / self.homotopy_stages as f64
        };
        let mut p = target.clone();
        p.sigma_eps = geometric_path(self.sigma_start.min(target.sigma_eps), target.sigma_eps, t);
        p.gamma = geometric_path(self.gamma_start, target.gamma, t);
        p.xi = geometric_path(self.xi_start, target.xi, t);
        p
    }
}

/// Next-period allocation read from log-consumption splines over `(K, D/K)`;
/// labor follows from the labor supply condition. With `seed_base` set,
/// the values at successors `base..base+8` carry unit tangents in
/// directions `3 + 2k` (worker) and `4 + 2k` (expert).
pub(crate) struct SplineNext<'a> {
    pub p: &'a ModelParams,
    pub chain: &'a ShockChain,
    pub taxes: &'a dyn TaxSchedule,
    pub log_c_w: &'a SplineField,
    pub log_c_e: &'a SplineField,
    pub seed_base: Option<usize>,
}

pub(crate) const SEED_CHUNK: usize = 8;

/// Spline coordinates at which the continuation is read for a successor
/// `(K, D)`: `(K, D/K)` pulled softly back toward the grid.
#[inline]
pub(crate) fn continuation_coords<T: Real>(grid: &Grid, k: T, d: T) -> [T; 2] {
    [grid.axis(0).soft_clamp(k), grid.axis(1).soft_clamp(d / k)]
}

impl<T: Real> NextAllocation<T> for SplineNext<'_> {
    #[inline]
    fn next(&mut self, s: usize, k: T, d: T) -> (T, T, T) {
        let x = continuation_coords(self.log_c_w.grid(), k, d);
        let mut cw = self.log_c_w.value(s, &x);
        let mut ce = self.log_c_e.value(s, &x);
        if let Some(base) = self.seed_base {
            if s >= base && s < base + SEED_CHUNK {
                let j = s - base;
                cw += T::seed(3 + 2 * j);
                ce += T::seed(4 + 2 * j);
            }
        }
        let (cw, ce) = (cw.exp(), ce.exp());
        let tau_l = self.taxes.labor(k.re(), d.re(), s);
        let l = labor_supply(self.p, self.chain.z_values[s], k, cw, tau_l);
        (cw, ce, l)
    }
}

/// Solver state: node values of the three unknowns and the log-consumption
/// splines that act as the continuation. Working in logs keeps extrapolated
/// consumption positive when successors leave the grid.
#[derive(Debug, Clone)]
pub struct Iterate {
    pub log_c_w: SplineField,
    pub log_c_e: SplineField,
    /// `D'/K` at the nodes, shock-major.
    pub dn: Vec<f64>,
}

impl Iterate {
    pub fn grid(&self) -> &Arc<Grid> {
        self.log_c_w.grid()
    }

    pub fn n_shocks(&self) -> usize {
        self.log_c_w.n_shocks()
    }

    pub fn node_values(&self) -> Vec<[f64; 3]> {
        let cw = self.log_c_w.node_values();
        let ce = self.log_c_e.node_values();
        (0..self.dn.len()).map(|j| [cw[j].exp(), ce[j].exp(), self.dn[j]]).collect()
    }

    pub fn from_node_values(grid: Arc<Grid>, n_shocks: usize, vals: &[[f64; 3]]) -> Result<Self> {
        if let Some(v) = vals.iter().find(|v| !(v[0] > 0.0 && v[1] > 0.0)) {
            return Err(Error::domain("consumption", format!("non-positive node value {v:?}")));
        }
        let cw: Vec<f64> = vals.iter().map(|v| v[0].ln()).collect();
        let ce: Vec<f64> = vals.iter().map(|v| v[1].ln()).collect();
        Ok(Iterate {
            log_c_w: SplineField::fit(grid.clone(), n_shocks, &cw)?,
            log_c_e: SplineField::fit(grid, n_shocks, &ce)?,
            dn: vals.iter().map(|v| v[2]).collect(),
        })
    }

    /// Deterministic steady-state style guess: workers consume labor income
    /// plus the annuity value of deposits, experts a fixed fraction of net
    /// worth, deposits per unit of capital stay constant.
    pub fn steady_state_guess(p: &ModelParams, chain: &ShockChain, grid: Arc<Grid>) -> Result<Self> {
        let ss = deterministic_steady_state(p, REFERENCE_LEVERAGE);
        let m = grid.size();
        let mut vals = Vec::with_capacity(m * chain.len());
        for s in 0..chain.len() {
            let z = chain.z_values[s];
            for i in 0..m {
                let x = grid.point(i);
                let (k, d) = (x[0], x[1]);
                let l = ss.l;
                let y = z.exp() * k.powf(p.alpha) * l.powf(1.0 - p.alpha);
                let w = (1.0 - p.alpha) * y / l;
                let c_w = (w * l + (1.0 - p.beta) * d * k).max(0.01 * y);
                // Log-utility consumption rule on expert net worth at q = 1.
                let wealth = k * (p.alpha * y / k + 1.0 - p.delta - d);
                let c_e = ((1.0 - p.beta) * wealth).max(0.01 * y);
                vals.push([c_w, c_e, d]);
            }
        }
        Self::from_node_values(grid, chain.len(), &vals)
    }
}

/// Everything a stage solve needs.
pub struct Stage<'a> {
    pub p: &'a ModelParams,
    pub chain: &'a ShockChain,
    pub taxes: &'a dyn TaxSchedule,
    pub cfg: &'a SolverConfig,
}

impl Stage<'_> {
    fn next<'b>(&'b self, it: &'b Iterate, seed_base: Option<usize>) -> SplineNext<'b> {
        SplineNext {
            p: self.p,
            chain: self.chain,
            taxes: self.taxes,
            log_c_w: &it.log_c_w,
            log_c_e: &it.log_c_e,
            seed_base,
        }
    }

    fn node_state(&self, grid: &Grid, j: usize) -> (usize, f64, f64) {
        let m = grid.size();
        let x = grid.point(j % m);
        (j / m, x[0], x[1] * x[0])
    }

    /// One time-iteration step: solves the point systems at all nodes given
    /// the continuation in `it`. Nodes whose solve fails keep their previous
    /// values; their count is returned.
    pub fn time_iteration_step(&self, it: &Iterate, current: &[[f64; 3]]) -> (Vec<[f64; 3]>, usize) {
        let grid = it.grid().clone();
        let out: Vec<Option<[f64; 3]>> = (0..current.len())
            .into_par_iter()
            .map(|j| {
                let (s, k, d) = self.node_state(&grid, j);
                let mut next = self.next(it, None);
                solve_point(self.p, self.chain, self.taxes, k, d, s, current[j], &mut next, self.cfg.point_tol, 60)
                    .ok()
                    .map(|o| o.x)
            })
            .collect();
        let failures = out.iter().filter(|o| o.is_none()).count();
        let vals = out
            .into_iter()
            .zip(current)
            .map(|(o, c)| o.unwrap_or(*c))
            .collect();
        (vals, failures)
    }

    /// Stacked collocation residuals with own values read from the splines.
    pub fn residuals(&self, it: &Iterate) -> Vec<f64> {
        let grid = it.grid().clone();
        let m = grid.size();
        let n = it.dn.len();
        let res: Vec<[f64; 3]> = (0..n)
            .into_par_iter()
            .map(|j| {
                let (s, k, d) = self.node_state(&grid, j);
                let xg = grid.point(j % m);
                let x = [
                    it.log_c_w.value(s, &xg[..2]).exp(),
                    it.log_c_e.value(s, &xg[..2]).exp(),
                    it.dn[j],
                ];
                let mut next = self.next(it, None);
                point_eval::<f64>(self.p, self.chain, self.taxes, k, d, s, x, &mut next).res
            })
            .collect();
        res.into_iter().flatten().map(|v| if v.is_finite() { v } else { f64::INFINITY }).collect()
    }

    /// Sparse Jacobian of [`Stage::residuals`] with respect to the unknown
    /// vector `[coeffs(ln C_w), coeffs(ln C_e), D'/K]`.
    pub fn jacobian(&self, it: &Iterate) -> Vec<Triplet<usize, usize, f64>> {
        let grid = it.grid().clone();
        let m = grid.size();
        let ns = it.n_shocks();
        let n = m * ns;
        let rows: Vec<Vec<Triplet<usize, usize, f64>>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let (s, k, d) = self.node_state(&grid, j);
                let xg = grid.point(j % m);
                let own = grid.stencil(&xg[..2]);
                let x = [
                    own.apply(it.log_c_w.block(s)).exp(),
                    own.apply(it.log_c_e.block(s)).exp(),
                    it.dn[j],
                ];
                let mut trips = Vec::with_capacity(3 * (2 * own.len + 1 + 2 * 16 * ns));
                let mut base = 0;
                while base < ns {
                    let mut xd = [Dual::<19>::constant(0.0); 3];
                    for (v, xv) in xd.iter_mut().zip(x) {
                        *v = Dual::constant(xv);
                    }
                    for (q, v) in xd.iter_mut().enumerate() {
                        v.d[q] = 1.0;
                    }
                    let mut next = self.next(it, Some(base));
                    let ev = point_eval(self.p, self.chain, self.taxes, k, d, s, xd, &mut next);
                    let kn = ev.k_next.v;
                    let dnx = ev.d_next.v;
                    for (r, res) in ev.res.iter().enumerate() {
                        let row = 3 * j + r;
                        if base == 0 {
                            for t in 0..own.len {
                                let col = s * m + own.idx[t];
                                trips.push(Triplet::new(row, col, res.d[0] * x[0] * own.w[t]));
                                trips.push(Triplet::new(row, n + col, res.d[1] * x[1] * own.w[t]));
                            }
                            trips.push(Triplet::new(row, 2 * n + j, res.d[2]));
                        }
                        for s2 in base..(base + SEED_CHUNK).min(ns) {
                            let prob = self.chain.p[s][s2];
                            if prob == 0.0 {
                                continue;
                            }
                            let k2 = kn * self.chain.zeta_values[s2];
                            let st = grid.stencil(&continuation_coords(&grid, k2, dnx));
                            let dw = res.d[3 + 2 * (s2 - base)];
                            let de = res.d[4 + 2 * (s2 - base)];
                            for t in 0..st.len {
                                let col = s2 * m + st.idx[t];
                                trips.push(Triplet::new(row, col, dw * st.w[t]));
                                trips.push(Triplet::new(row, n + col, de * st.w[t]));
                            }
                        }
                    }
                    base += SEED_CHUNK;
                }
                trips
            })
            .collect();
        rows.into_iter().flatten().collect()
    }

    fn apply_step(&self, it: &Iterate, step: &[f64], t: f64) -> Result<Iterate> {
        let n = it.dn.len();
        let mut cw = it.log_c_w.clone();
        let mut ce = it.log_c_e.clone();
        for (c, s) in cw.coeffs_mut().iter_mut().zip(&step[..n]) {
            *c += t * s;
        }
        for (c, s) in ce.coeffs_mut().iter_mut().zip(&step[n..2 * n]) {
            *c += t * s;
        }
        let dn = it.dn.iter().zip(&step[2 * n..]).map(|(a, b)| a + t * b).collect();
        Ok(Iterate {
            log_c_w: cw,
            log_c_e: ce,
            dn,
        })
    }

    /// Newton iterations on the stacked system; returns the polished iterate
    /// and the number of iterations used.
    pub fn newton_polish(&self, it: &Iterate) -> Result<(Iterate, usize)> {
        let mut cur = it.clone();
        let mut g = self.residuals(&cur);
        let mut norm = sup_norm(&g);
        let n = g.len();
        for iter in 0..self.cfg.newton_max_iter {
            if norm < self.cfg.newton_tol {
                return Ok((cur, iter));
            }
            let trips = self.jacobian(&cur);
            let jac = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
                .map_err(|e| Error::convergence("newton polish", format!("jacobian assembly: {e:?}")))?;
            let lu = jac
                .sp_lu()
                .map_err(|e| Error::convergence("newton polish", format!("sparse LU failed: {e:?}")))?;
            let rhs = faer::Col::<f64>::from_fn(n, |i| -g[i]);
            let sol = lu.solve(&rhs);
            let step: Vec<f64> = (0..n).map(|i| sol[i]).collect();
            if step.iter().any(|v| !v.is_finite()) {
                return Err(Error::convergence("newton polish", "non-finite Newton step"));
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let trial = self.apply_step(&cur, &step, t)?;
                let gt = self.residuals(&trial);
                let nt = sup_norm(&gt);
                if nt.is_finite() && nt < norm * (1.0 - 1e-4 * t) {
                    cur = trial;
                    g = gt;
                    norm = nt;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return Err(Error::convergence(
                    "newton polish",
                    format!("no descent after {iter} iterations, residual {norm:.3e}"),
                ));
            }
        }
        if norm < self.cfg.newton_tol {
            Ok((cur, self.cfg.newton_max_iter))
        } else {
            Err(Error::convergence(
                "newton polish",
                format!("residual {norm:.3e} after {} iterations", self.cfg.newton_max_iter),
            ))
        }
    }

    /// Damped time iteration with periodic attempts at Newton on the stacked
    /// system; the first Newton success ends the stage. Stalled time
    /// iteration with a small residual is accepted as well.
    pub fn solve(&self, start: Iterate, log: &mut StageLog) -> Result<Iterate> {
        let grid = start.grid().clone();
        let ns = start.n_shocks();
        let mut it = start;
        let mut vals = it.node_values();
        let omega = self.cfg.damping;
        let every = self.cfg.newton_every.max(1);
        for iter in 0..self.cfg.ti_max_iter {
            let (new, failures) = self.time_iteration_step(&it, &vals);
            let mut change = 0.0f64;
            for (a, b) in vals.iter_mut().zip(&new) {
                for q in 0..3 {
                    let upd = (1.0 - omega) * a[q] + omega * b[q];
                    change = change.max((upd - a[q]).abs() / a[q].abs().max(1.0));
                    a[q] = upd;
                }
            }
            it = Iterate::from_node_values(grid.clone(), ns, &vals)?;
            log.ti_iterations = iter + 1;
            log.ti_changes.push(change);
            log.point_failures = failures;
            let stalled = failures == 0 && change < self.cfg.ti_tol;
            if !(stalled || (iter + 1) % every == 0) {
                continue;
            }
            match self.newton_polish(&it) {
                Ok((polished, n)) => {
                    log.newton_iterations += n;
                    log.residual = sup_norm(&self.residuals(&polished));
                    return Ok(polished);
                }
                Err(e) => log.newton_failures.push(e.to_string()),
            }
            if stalled {
                let g = sup_norm(&self.residuals(&it));
                if g < self.cfg.newton_tol * 10.0 {
                    log.residual = g;
                    return Ok(it);
                }
            }
        }
        let g = sup_norm(&self.residuals(&it));
        Err(Error::convergence(
            "time iteration",
            format!(
                "no convergence after {} iterations (residual {g:.3e}, {} point failures)",
                self.cfg.ti_max_iter, log.point_failures
            ),
        ))
    }
}

/// Diagnostics of one homotopy stage.
#[derive(Debug, Clone, Default)]
pub struct StageLog {
    pub stage: usize,
    pub sigma_eps: f64,
    pub gamma: f64,
    pub xi: f64,
    pub ti_iterations: usize,
    pub ti_changes: Vec<f64>,
    pub newton_iterations: usize,
    pub newton_failures: Vec<String>,
    pub point_failures: usize,
    pub residual: f64,
}
