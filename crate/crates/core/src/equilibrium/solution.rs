use std::sync::Arc;

use crate::checkpoint::Checkpoint;
use crate::equilibrium::solver::{continuation_coords, Iterate, SolverConfig, SplineNext, Stage, StageLog};
use crate::equilibrium::system::{point_eval, solve_point, PointEval};
use crate::equilibrium::taxes::{NoTaxes, SimpleRule, TaxSchedule};
use crate::error::{Error, Result};
use crate::keyvalue::{fmt_f64, KeyValues};
use crate::model::primitives::{capital_production_g, production_g};
use crate::model::{ModelParams, ShockChain};
use crate::spline::{Grid, SplineField};
use crate::util::halton_points;

pub const EQUATION_NAMES: [&str; 8] = [
    "labor_supply",
    "worker_euler",
    "expert_euler",
    "arbitrage",
    "capital_price",
    "resource",
    "capital_law",
    "deposit_law",
];

/// Max and mean absolute residual per equilibrium condition on an off-grid
/// test set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualReport {
    pub points: usize,
    pub max: [f64; 8],
    pub mean: [f64; 8],
    pub extrapolated: usize,
    /// Largest residual at the collocation nodes of the stacked system.
    pub collocation_max: f64,
}

impl ResidualReport {
    pub fn overall_max(&self) -> f64 {
        self.max.iter().fold(0.0f64, |m, v| m.max(*v))
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("residual.points", self.points);
        kv.set("residual.extrapolated", self.extrapolated);
        kv.set("residual.collocation_max", fmt_f64(self.collocation_max));
        for (k, name) in EQUATION_NAMES.iter().enumerate() {
            kv.set(&format!("residual.{name}.max"), fmt_f64(self.max[k]));
            kv.set(&format!("residual.{name}.mean"), fmt_f64(self.mean[k]));
        }
        kv
    }
}

/// Solved competitive equilibrium under a tax schedule. Fields are splines
/// over `(K, D/K)`; use [`EquilibriumSolution::eval`] with `(K, D)`.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub params: ModelParams,
    pub chain: ShockChain,
    pub config: SolverConfig,
    pub taxes: Arc<dyn TaxSchedule>,
    /// Log consumption splines; these are the continuation the solver used
    /// and what every evaluation reads. `c_w` and `c_e` are level fits kept
    /// for export.
    pub log_c_w: SplineField,
    pub log_c_e: SplineField,
    pub c_w: SplineField,
    pub c_e: SplineField,
    pub l: SplineField,
    pub i: SplineField,
    pub r: SplineField,
    pub q: SplineField,
    pub d_next: SplineField,
    /// Pre-shock next-period capital; realized capital is `zeta' * k_next`.
    pub k_next: SplineField,
    pub report: ResidualReport,
    pub stages: Vec<StageLog>,
}

/// Equilibrium objects at one state, obtained by solving the point system
/// against the solution's continuation.
#[derive(Debug, Clone, Copy)]
pub struct StateEval {
    pub k: f64,
    pub d: f64,
    pub shock: usize,
    pub e: PointEval<f64>,
    pub extrapolated: bool,
}

impl EquilibriumSolution {
    pub fn grid(&self) -> &Arc<Grid> {
        self.c_w.grid()
    }

    pub fn coords(k: f64, d: f64) -> [f64; 2] {
        [k, d / k]
    }

    /// Field value at `(K, D, shock)` with the extrapolation flag.
    pub fn eval(&self, field: &SplineField, k: f64, d: f64, shock: usize) -> Result<(f64, bool)> {
        field.eval(shock, &Self::coords(k, d))
    }

    pub fn in_hull(&self, k: f64, d: f64) -> bool {
        self.grid().contains(&Self::coords(k, d))
    }

    pub(crate) fn next_alloc(&self) -> SplineNext<'_> {
        SplineNext {
            p: &self.params,
            chain: &self.chain,
            taxes: self.taxes.as_ref(),
            log_c_w: &self.log_c_w,
            log_c_e: &self.log_c_e,
            seed_base: None,
        }
    }

    /// Solves the point conditions at an arbitrary state, warm-started from
    /// the interpolated policies.
    pub fn state(&self, k: f64, d: f64, shock: usize) -> Result<StateEval> {
        if shock >= self.chain.len() {
            return Err(Error::Config(format!("shock index {shock} out of range")));
        }
        let x = Self::coords(k, d);
        let extrapolated = !self.grid().contains(&x);
        let guess = [
            self.log_c_w.value(shock, &x).exp(),
            self.log_c_e.value(shock, &x).exp(),
            self.eval(&self.d_next, k, d, shock)?.0 / k,
        ];
        let mut next = self.next_alloc();
        let out = solve_point(
            &self.params,
            &self.chain,
            self.taxes.as_ref(),
            k,
            d,
            shock,
            guess,
            &mut next,
            self.config.point_tol,
            60,
        )?;
        let mut next = self.next_alloc();
        let e = point_eval::<f64>(&self.params, &self.chain, self.taxes.as_ref(), k, d, shock, out.x, &mut next);
        Ok(StateEval {
            k,
            d,
            shock,
            e,
            extrapolated,
        })
    }

    /// Residuals of the eight equilibrium conditions at a state using only
    /// the interpolated fields (no re-solve).
    pub fn field_residuals(&self, k: f64, d: f64, s: usize) -> ([f64; 8], bool) {
        let p = &self.params;
        let x = Self::coords(k, d);
        let mut ext = !self.grid().contains(&x);
        let c_w = self.log_c_w.value(s, &x).exp();
        let c_e = self.log_c_e.value(s, &x).exp();
        let l = self.l.value(s, &x);
        let inv = self.i.value(s, &x);
        let r = self.r.value(s, &x);
        let q = self.q.value(s, &x);
        let dn = self.d_next.value(s, &x);
        let kn = self.k_next.value(s, &x);
        let z = self.chain.z_values[s];
        let (y, _, w) = production_g(z, k, l, p);
        let tau_l = self.taxes.labor(k, d, s);
        let (tau_d, _) = self.taxes.deposit(k, d, s, q);
        let (tau_k, _) = self.taxes.capital(k, d, s, q);
        let (phi, dphi) = capital_production_g(inv / k, p);

        let (mut e_uw, mut e_ue, mut e_ret) = (0.0, 0.0, 0.0);
        for (s2, &prob) in self.chain.p[s].iter().enumerate() {
            if prob == 0.0 {
                continue;
            }
            let zeta = self.chain.zeta_values[s2];
            let k2 = zeta * kn;
            ext |= !self.grid().contains(&[k2, dn / k2]);
            let x2 = continuation_coords(self.grid(), k2, dn);
            let cw2 = self.log_c_w.value(s2, &x2).exp();
            let ce2 = self.log_c_e.value(s2, &x2).exp();
            let l2 = self.l.value(s2, &x2);
            let i2 = self.i.value(s2, &x2);
            let q2 = self.q.value(s2, &x2);
            let (_, rk2, _) = production_g(self.chain.z_values[s2], k2, l2, p);
            let (phi2, _) = capital_production_g(i2 / k2, p);
            let pi2 = q2 * phi2 - i2 / k2;
            let ue2 = ce2.powf(-p.gamma);
            e_uw += prob * cw2.powf(-p.gamma);
            e_ue += prob * ue2;
            e_ret += prob * ue2 * zeta * (rk2 + (1.0 - p.delta) * q2 + pi2);
        }
        let uw = c_w.powf(-p.gamma);
        let ue = c_e.powf(-p.gamma);
        let res = [
            p.psi * l.powf(p.nu) * c_w.powf(p.gamma) / ((1.0 - tau_l) * w) - 1.0,
            p.beta * r * e_uw / uw - 1.0,
            p.beta * r * e_ue / ((1.0 - tau_d) * ue) - 1.0,
            e_ue * (1.0 + tau_k) * r * q / ((1.0 - tau_d) * e_ret) - 1.0,
            q * dphi - 1.0,
            (y - inv - c_w - c_e) / y,
            (kn - k * (phi + 1.0 - p.delta)) / kn,
            (dn / r + c_w - d - (1.0 - tau_l) * w * l) / y,
        ];
        (res, ext)
    }

    /// Residual report on `density` off-grid points per collocation node.
    pub fn residual_report(&self, density: usize) -> ResidualReport {
        let grid = self.grid();
        let (a0, a1) = (grid.axis(0), grid.axis(1));
        let per_shock = density * grid.size();
        let pts = halton_points(per_shock, 2);
        let mut rep = ResidualReport::default();
        let mut sums = [0.0; 8];
        for s in 0..self.chain.len() {
            for u in &pts {
                let k = a0.lo() + u[0] * (a0.hi() - a0.lo());
                let lev = a1.lo() + u[1] * (a1.hi() - a1.lo());
                let (res, ext) = self.field_residuals(k, lev * k, s);
                rep.points += 1;
                if ext {
                    rep.extrapolated += 1;
                }
                for q in 0..8 {
                    let v = if res[q].is_finite() { res[q].abs() } else { f64::INFINITY };
                    rep.max[q] = rep.max[q].max(v);
                    sums[q] += v;
                }
            }
        }
        for q in 0..8 {
            rep.mean[q] = sums[q] / rep.points as f64;
        }
        rep
    }

    /// Conditional risk premium `E[zeta'(R' + (1-delta) q' + Pi')]/q - r`
    /// and conditional standard deviations of next-period log consumption.
    pub fn risk_metrics(&self, k: f64, d: f64, shock: usize) -> Result<RiskMetrics> {
        let st = self.state(k, d, shock)?;
        let mut ext = st.extrapolated;
        for (s2, &prob) in self.chain.p[shock].iter().enumerate() {
            if prob > 0.0 {
                ext |= !self.in_hull(self.chain.zeta_values[s2] * st.e.k_next, st.e.d_next);
            }
        }
        Ok(RiskMetrics::from_eval(&st.e, ext))
    }

    /// Expert budget constraint at a state with transfers from the
    /// government budget; returns the absolute gap relative to output.
    pub fn walras_gap(&self, k: f64, d: f64, shock: usize) -> Result<f64> {
        let st = self.state(k, d, shock)?;
        let e = &st.e;
        let p = &self.params;
        let transfer = e.tau_l * e.w * e.l + e.tau_d * e.d_next / e.r + e.tau_k * e.q * e.k_next;
        let (phi, _) = capital_production_g(e.i / k, p);
        let lhs = e.c_e + (1.0 + e.tau_k) * e.q * e.k_next + d;
        let rhs = (1.0 - e.tau_d) * e.d_next / e.r + e.r_k * k + (1.0 - p.delta) * e.q * k + e.q * phi * k - e.i
            + transfer;
        Ok((lhs - rhs).abs() / e.y)
    }

    pub fn meta(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.extend(&self.params.to_key_values(), "param.");
        kv.extend(&self.config.to_key_values(""), "solver.");
        kv.extend(&self.taxes.describe(), "taxes.");
        kv.extend(&self.report.to_key_values(), "");
        kv.set("params_hash", self.params.hash());
        kv
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new("competitive-equilibrium", self.meta());
        for (name, f) in self.named_fields() {
            c.push(name, f);
        }
        c
    }

    pub fn named_fields(&self) -> [(&'static str, &SplineField); 10] {
        [
            ("log_C_w", &self.log_c_w),
            ("log_C_e", &self.log_c_e),
            ("C_w", &self.c_w),
            ("C_e", &self.c_e),
            ("L", &self.l),
            ("I", &self.i),
            ("r", &self.r),
            ("q", &self.q),
            ("D_next", &self.d_next),
            ("K_next", &self.k_next),
        ]
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind("competitive-equilibrium")?;
        let mut meta = c.meta.clone();
        let mut pk = meta.take_prefixed("param.");
        let params = ModelParams::take_from(&mut pk)?;
        pk.finish()?;
        let mut sk = meta.take_prefixed("solver.");
        let config = SolverConfig::take_from(&mut sk, "")?;
        sk.finish()?;
        let mut tk = meta.take_prefixed("taxes.");
        let taxes: Arc<dyn TaxSchedule> = match tk.take::<String>("kind")?.as_deref() {
            Some("none") => Arc::new(NoTaxes),
            Some("simple-rule") => Arc::new(SimpleRule::new(
                tk.take("tau_d1")?.unwrap_or(0.0),
                tk.take("tau_d2")?.unwrap_or(0.0),
            )),
            other => {
                return Err(Error::Format(format!(
                    "checkpoint tax schedule {other:?} cannot be restored"
                )))
            }
        };
        let chain = params.shock_chain()?;
        let mut report = ResidualReport::default();
        let rk = meta.take_prefixed("residual.");
        let get = |k: &str| rk.get(k).and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::NAN);
        report.points = get("points") as usize;
        report.extrapolated = get("extrapolated") as usize;
        report.collocation_max = get("collocation_max");
        for (q, name) in EQUATION_NAMES.iter().enumerate() {
            report.max[q] = get(&format!("{name}.max"));
            report.mean[q] = get(&format!("{name}.mean"));
        }
        Ok(EquilibriumSolution {
            params,
            chain,
            config,
            taxes,
            log_c_w: c.field("log_C_w")?,
            log_c_e: c.field("log_C_e")?,
            c_w: c.field("C_w")?,
            c_e: c.field("C_e")?,
            l: c.field("L")?,
            i: c.field("I")?,
            r: c.field("r")?,
            q: c.field("q")?,
            d_next: c.field("D_next")?,
            k_next: c.field("K_next")?,
            report,
            stages: Vec::new(),
        })
    }

    /// The solver iterate (consumption splines and deposit policy) for warm
    /// starts.
    pub fn iterate(&self) -> Iterate {
        let m = self.grid().size();
        let dn_vals = self.d_next.node_values();
        let dn = (0..dn_vals.len())
            .map(|j| dn_vals[j] / self.grid().point(j % m)[0])
            .collect();
        Iterate {
            log_c_w: self.log_c_w.clone(),
            log_c_e: self.log_c_e.clone(),
            dn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskMetrics {
    /// Quarterly, `expected_return - r`.
    pub risk_premium: f64,
    /// Expected gross return on capital.
    pub expected_return: f64,
    pub r: f64,
    pub vol_log_cw: f64,
    pub vol_log_ce: f64,
    pub extrapolated: bool,
}

impl RiskMetrics {
    pub fn from_eval(e: &PointEval<f64>, extrapolated: bool) -> Self {
        let m = e.log_moments;
        RiskMetrics {
            risk_premium: e.e_payoff / e.q - e.r,
            expected_return: e.e_payoff / e.q,
            r: e.r,
            vol_log_cw: (m[2] - m[0] * m[0]).max(0.0).sqrt(),
            vol_log_ce: (m[3] - m[1] * m[1]).max(0.0).sqrt(),
            extrapolated,
        }
    }

    /// Annualized premium `E[R^k]^4 - r^4` (gross quarterly rates compounded).
    pub fn annualized_premium(&self) -> f64 {
        self.expected_return.powi(4) - self.r.powi(4)
    }
}

/// Builds the stored fields from a converged iterate.
pub(crate) fn assemble(
    p: &ModelParams,
    chain: ShockChain,
    config: &SolverConfig,
    taxes: Arc<dyn TaxSchedule>,
    it: &Iterate,
    stages: Vec<StageLog>,
) -> Result<EquilibriumSolution> {
    let grid = it.grid().clone();
    let m = grid.size();
    let ns = chain.len();
    let vals = it.node_values();
    let mut cols: [Vec<f64>; 6] = Default::default();
    let mut dnext = Vec::with_capacity(vals.len());
    let mut cons: [Vec<f64>; 2] = Default::default();
    for (j, v) in vals.iter().enumerate() {
        let x = grid.point(j % m);
        let (s, k, d) = (j / m, x[0], x[1] * x[0]);
        let mut next = SplineNext {
            p,
            chain: &chain,
            taxes: taxes.as_ref(),
            log_c_w: &it.log_c_w,
            log_c_e: &it.log_c_e,
            seed_base: None,
        };
        let e = point_eval::<f64>(p, &chain, taxes.as_ref(), k, d, s, *v, &mut next);
        if !(e.c_w > 0.0 && e.c_e > 0.0 && e.r.is_finite() && e.q.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-positive consumption or invalid prices at node K={k}, D={d}, shock={s}"
            )));
        }
        for (c, val) in cols.iter_mut().zip([e.l, e.i, e.r, e.q, e.k_next, e.profit]) {
            c.push(val);
        }
        dnext.push(e.d_next);
        cons[0].push(v[0]);
        cons[1].push(v[1]);
    }
    let fit = |v: &[f64]| SplineField::fit(grid.clone(), ns, v);
    let stage = Stage {
        p,
        chain: &chain,
        taxes: taxes.as_ref(),
        cfg: config,
    };
    let collocation_max = crate::util::sup_norm(&stage.residuals(it));
    let mut sol = EquilibriumSolution {
        params: p.clone(),
        chain: chain.clone(),
        config: config.clone(),
        taxes: taxes.clone(),
        log_c_w: it.log_c_w.clone(),
        log_c_e: it.log_c_e.clone(),
        c_w: fit(&cons[0])?,
        c_e: fit(&cons[1])?,
        l: fit(&cols[0])?,
        i: fit(&cols[1])?,
        r: fit(&cols[2])?,
        q: fit(&cols[3])?,
        d_next: fit(&dnext)?,
        k_next: fit(&cols[4])?,
        report: ResidualReport::default(),
        stages,
    };
    sol.report = sol.residual_report(config.check_density);
    sol.report.collocation_max = collocation_max;
    Ok(sol)
}

/// Solves the competitive equilibrium under `taxes` by homotopy from an
/// easy parametrization.
pub fn solve_equilibrium(
    p: &ModelParams,
    taxes: Arc<dyn TaxSchedule>,
    config: &SolverConfig,
) -> Result<EquilibriumSolution> {
    p.validate()?;
    let grid = config.grid.build(p)?;
    let mut stages = Vec::new();
    let mut it: Option<Iterate> = None;
    let mut chain = p.shock_chain()?;
    for j in 0..=config.homotopy_stages {
        let pj = config.stage_params(p, j);
        chain = pj.shock_chain()?;
        let start = match it.take() {
            Some(prev) => prev,
            None => Iterate::steady_state_guess(&pj, &chain, grid.clone())?,
        };
        let mut log = StageLog {
            stage: j,
            sigma_eps: pj.sigma_eps,
            gamma: pj.gamma,
            xi: pj.xi,
            ..Default::default()
        };
        let stage = Stage {
            p: &pj,
            chain: &chain,
            taxes: taxes.as_ref(),
            cfg: config,
        };
        let solved = stage.solve(start, &mut log).map_err(|e| {
            Error::convergence(
                format!(
                    "homotopy stage {j} (sigma_eps={:.4e}, gamma={:.4}, xi={:.4})",
                    pj.sigma_eps, pj.gamma, pj.xi
                ),
                e,
            )
        })?;
        stages.push(log);
        it = Some(solved);
    }
    assemble(p, chain, config, taxes, it.as_ref().expect("at least one stage"), stages)
}

/// Solves at the target parameters directly, starting from `warm`.
pub fn solve_equilibrium_from(
    warm: &EquilibriumSolution,
    taxes: Arc<dyn TaxSchedule>,
) -> Result<EquilibriumSolution> {
    let p = &warm.params;
    let chain = warm.chain.clone();
    let mut log = StageLog {
        stage: 0,
        sigma_eps: p.sigma_eps,
        gamma: p.gamma,
        xi: p.xi,
        ..Default::default()
    };
    let stage = Stage {
        p,
        chain: &chain,
        taxes: taxes.as_ref(),
        cfg: &warm.config,
    };
    let it = stage.solve(warm.iterate(), &mut log)?;
    assemble(p, chain.clone(), &warm.config, taxes, &it, vec![log])
}
