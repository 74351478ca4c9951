use std::sync::Arc;

use crate::checkpoint::Checkpoint;
use crate::equilibrium::{GridSpec, REFERENCE_LEVERAGE};
use crate::error::{Error, Result};
use crate::keyvalue::{fmt_f64, KeyValues};
use crate::model::{ModelParams, ShockChain};
use crate::ramsey::solver::{
    augmented_coords, evaluate_value, initial_values, node_evals, time_iterate, RamseyConfig, RamseyLog,
    RamseyPolicies,
};
use crate::ramsey::system::{multiplier_scale, ramsey_eval, solve_ramsey_point, RamseyEval};
use crate::simulation::{Record, Regime, SimState};
use crate::spline::{Grid, SplineField};

/// Taxes and transfer that decentralize the plan at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackedOutTaxes {
    pub tau_k: f64,
    pub tau_l: f64,
    pub tau_d: f64,
    pub transfer: f64,
}

#[derive(Debug, Clone)]
pub struct RamseySolution {
    pub params: ModelParams,
    pub chain: ShockChain,
    pub config: RamseyConfig,
    pub policies: RamseyPolicies,
    /// Saddle-point objective over `(K, D/K, mu)`.
    pub v: SplineField,
    /// Its conditional expectation over pre-shock `(K', D'/K', mu')`.
    pub ev: SplineField,
    pub c_w: SplineField,
    pub c_e: SplineField,
    pub l: SplineField,
    pub i: SplineField,
    pub d_next: SplineField,
    pub eta: SplineField,
    pub tau_l: SplineField,
    pub tau_d: SplineField,
    pub tau_k: SplineField,
    pub transfer: SplineField,
    pub log: RamseyLog,
}

/// Solves the planner problem by time iteration on its first-order
/// conditions, moving `nu` from `cfg.nu_start` to `p.nu`, then evaluates the
/// saddle-point objective under the converged policies.
pub fn solve_ramsey(p: &ModelParams, cfg: &RamseyConfig) -> Result<RamseySolution> {
    p.validate()?;
    let chain = p.shock_chain()?;
    let grid = cfg.grid(p)?;
    let mut log = RamseyLog {
        nu_schedule: cfg.nu_schedule(p.nu),
        ..RamseyLog::default()
    };
    let start = initial_values(p, cfg, &grid)?;
    let (pol, vals) = time_iterate(p, &chain, cfg, &grid, start, &mut log)?;
    assemble(p, chain, cfg, pol, &vals, log)
}

fn assemble(
    p: &ModelParams,
    chain: ShockChain,
    cfg: &RamseyConfig,
    policies: RamseyPolicies,
    vals: &[[f64; 4]],
    mut log: RamseyLog,
) -> Result<RamseySolution> {
    let evals = node_evals(p, &chain, &policies, cfg.bounds(), vals);
    if let Some(j) = evals.iter().position(|e| !e.flow.is_finite()) {
        return Err(Error::domain("planner solution", format!("non-finite objective at node {j}")));
    }
    let (v, ev) = evaluate_value(p, &chain, cfg, &evals, &mut log)?;
    let grid = policies.grid().clone();
    let ns = chain.len();
    let fit = |f: &dyn Fn(&RamseyEval<f64>) -> f64| {
        SplineField::fit(grid.clone(), ns, &evals.iter().map(f).collect::<Vec<_>>())
    };
    Ok(RamseySolution {
        c_w: fit(&|e| e.c_w)?,
        c_e: fit(&|e| e.c_e)?,
        l: fit(&|e| e.l)?,
        i: fit(&|e| e.i)?,
        d_next: fit(&|e| e.d_next)?,
        eta: fit(&|e| e.eta)?,
        tau_l: fit(&|e| e.tau_l)?,
        tau_d: fit(&|e| e.tau_d)?,
        tau_k: fit(&|e| e.tau_k)?,
        transfer: fit(&|e| e.transfer())?,
        params: p.clone(),
        chain,
        config: cfg.clone(),
        policies,
        v,
        ev,
        log,
    })
}

impl RamseySolution {
    pub fn grid(&self) -> &Arc<Grid> {
        self.v.grid()
    }

    pub fn in_hull(&self, k: f64, d: f64, mu: f64) -> bool {
        self.grid().contains(&[k, d / k, mu / self.policies.mu_scale])
    }

    /// Solves the planner conditions at `(K, D, mu, shock)` with the stored
    /// policies as the continuation.
    pub fn stage_saddle(&self, k: f64, d: f64, mu: f64, shock: usize) -> Result<RamseyEval<f64>> {
        if !(k > 0.0 && k.is_finite() && d.is_finite() && mu.is_finite()) || shock >= self.chain.len() {
            return Err(Error::domain(
                "planner stage",
                format!("invalid state K={k}, D={d}, mu={mu}, shock={shock}"),
            ));
        }
        let guess = self.policies.guess(k, d, mu, shock);
        let pt = solve_ramsey_point(
            &self.params,
            &self.chain,
            k,
            d,
            mu,
            shock,
            guess,
            self.config.bounds(),
            &mut self.policies.next(),
            self.config.point_tol,
            60,
        )?;
        let e = ramsey_eval::<f64>(
            &self.params,
            &self.chain,
            k,
            d,
            mu,
            shock,
            pt.x,
            self.config.bounds(),
            &mut self.policies.next(),
        );
        Ok(e)
    }

    pub fn backout_taxes(&self, k: f64, d: f64, mu: f64, shock: usize) -> Result<BackedOutTaxes> {
        let e = self.stage_saddle(k, d, mu, shock)?;
        if !(e.e_uw > 0.0 && e.e_ue > 0.0) {
            return Err(Error::domain("tax back-out", "vanishing expected marginal utility"));
        }
        Ok(BackedOutTaxes {
            tau_k: e.tau_k,
            tau_l: e.tau_l,
            tau_d: e.tau_d,
            transfer: e.transfer(),
        })
    }

    /// Saddle-point objective; the flag marks extrapolation.
    pub fn value(&self, k: f64, d: f64, mu: f64, shock: usize) -> Result<(f64, bool)> {
        self.v.eval(shock, &[k, d / k, mu / self.policies.mu_scale])
    }

    /// Planner welfare `lambda V_e + (1 - lambda) V_w` when the plan starts at
    /// `(K, D, shock)` without prior promises.
    pub fn welfare(&self, k: f64, d: f64, shock: usize) -> Result<(f64, bool)> {
        self.value(k, d, 0.0, shock)
    }

    /// Welfare of re-optimizing at `(K, D, shock)` minus welfare of honoring
    /// the promise `mu`. The objective at `mu` carries `-mu D u_wc`, which is
    /// added back to recover the welfare of the continuing plan.
    pub fn time_inconsistency_gap(&self, k: f64, d: f64, mu: f64, shock: usize) -> Result<f64> {
        let (v0, _) = self.value(k, d, 0.0, shock)?;
        if mu == 0.0 {
            return Ok(0.0);
        }
        let (vm, _) = self.value(k, d, mu, shock)?;
        let e = self.stage_saddle(k, d, mu, shock)?;
        Ok(v0 - (vm + mu * d * e.c_w.powf(-self.params.gamma)))
    }

    /// Implementability residual at a state, relative to output:
    /// `(D u_wc - u_wc C_w - u_wl L - beta E[u_wc'] D') / (u_wc Y)`.
    pub fn implementability_residual(&self, k: f64, d: f64, mu: f64, shock: usize) -> Result<f64> {
        Ok(self.stage_saddle(k, d, mu, shock)?.res[3])
    }

    pub fn meta(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.extend(&self.params.to_key_values(), "param.");
        kv.extend(&self.config.to_key_values(""), "solver.");
        kv.set("params_hash", self.params.hash());
        kv.set("ti_iterations", self.log.ti_iterations);
        kv.set("value_iterations", self.log.value_iterations);
        kv.set("point_failures", self.log.point_failures);
        kv.set("converged", self.log.converged);
        kv.set(
            "nu_schedule",
            self.log.nu_schedule.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" "),
        );
        kv
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new("ramsey", self.meta());
        for (name, f) in self.named_fields() {
            c.push(name, f);
        }
        c
    }

    fn named_fields(&self) -> [(&'static str, &SplineField); 16] {
        [
            ("log_C_w", &self.policies.log_c_w),
            ("log_C_e", &self.policies.log_c_e),
            ("eta_policy", &self.policies.eta),
            ("D_next_ratio", &self.policies.dn),
            ("V_tilde", &self.v),
            ("EV_tilde", &self.ev),
            ("C_w", &self.c_w),
            ("C_e", &self.c_e),
            ("L", &self.l),
            ("I", &self.i),
            ("D_next", &self.d_next),
            ("eta", &self.eta),
            ("tau_l", &self.tau_l),
            ("tau_d", &self.tau_d),
            ("tau_k", &self.tau_k),
            ("transfer", &self.transfer),
        ]
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind("ramsey")?;
        let mut meta = c.meta.clone();
        let mut pk = meta.take_prefixed("param.");
        let params = ModelParams::take_from(&mut pk)?;
        pk.finish()?;
        let mut sk = meta.take_prefixed("solver.");
        let config = RamseyConfig::take_from(&mut sk, "")?;
        sk.finish()?;
        let nu_schedule = meta
            .take::<String>("nu_schedule")?
            .unwrap_or_default()
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("nu_schedule: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let log = RamseyLog {
            nu_schedule,
            ti_iterations: meta.take("ti_iterations")?.unwrap_or(0),
            value_iterations: meta.take("value_iterations")?.unwrap_or(0),
            point_failures: meta.take("point_failures")?.unwrap_or(0),
            converged: meta.take("converged")?.unwrap_or(false),
            ..RamseyLog::default()
        };
        let mu_scale = multiplier_scale(&params);
        Ok(RamseySolution {
            chain: params.shock_chain()?,
            params,
            config,
            policies: RamseyPolicies {
                log_c_w: c.field("log_C_w")?,
                log_c_e: c.field("log_C_e")?,
                eta: c.field("eta_policy")?,
                dn: c.field("D_next_ratio")?,
                mu_scale,
            },
            v: c.field("V_tilde")?,
            ev: c.field("EV_tilde")?,
            c_w: c.field("C_w")?,
            c_e: c.field("C_e")?,
            l: c.field("L")?,
            i: c.field("I")?,
            d_next: c.field("D_next")?,
            eta: c.field("eta")?,
            tau_l: c.field("tau_l")?,
            tau_d: c.field("tau_d")?,
            tau_k: c.field("tau_k")?,
            transfer: c.field("transfer")?,
            log,
        })
    }

    /// Saddle-point objective of continuing with `(K', D', mu')` from the
    /// current shock, read from the expectation field.
    pub fn continuation(&self, shock: usize, k_next: f64, d_next: f64, mu_next: f64) -> f64 {
        self.ev
            .value(shock, &augmented_coords(self.grid(), self.policies.mu_scale, k_next, d_next, mu_next))
    }
}

impl Regime for RamseySolution {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn chain(&self) -> &ShockChain {
        &self.chain
    }

    fn label(&self) -> String {
        "ramsey".to_string()
    }

    fn initial_state(&self) -> SimState {
        let k = GridSpec::reference_capital(&self.params);
        SimState {
            k,
            d: REFERENCE_LEVERAGE * k,
            mu: 0.0,
            shock: self.chain.median_normal(),
        }
    }

    fn step(&self, st: &SimState) -> Result<Record> {
        let e = self.stage_saddle(st.k, st.d, st.mu, st.shock)?;
        Ok(Record {
            c_w: e.c_w,
            c_e: e.c_e,
            l: e.l,
            i: e.i,
            y: e.y,
            r: e.r,
            q: e.q,
            tau_l: e.tau_l,
            tau_d: e.tau_d,
            tau_k: e.tau_k,
            transfer: e.transfer(),
            expected_return: e.e_payoff / e.q,
            k_next: e.k_next,
            d_next: e.d_next,
            mu_next: e.eta,
            extrapolated: !self.in_hull(st.k, st.d, st.mu),
        })
    }
}
