use crate::equilibrium::solution::{EquilibriumSolution, RiskMetrics};
use crate::equilibrium::solver::{GridSpec, REFERENCE_LEVERAGE};
use crate::error::Result;
use crate::model::{ModelParams, ShockChain};
use crate::simulation::{Record, Regime, SimState};

impl Regime for EquilibriumSolution {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn chain(&self) -> &ShockChain {
        &self.chain
    }

    fn label(&self) -> String {
        match self.taxes.describe().get("kind") {
            Some("none") => "no-policy".to_string(),
            Some(kind) => kind.to_string(),
            None => "taxed".to_string(),
        }
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
        let ev = self.state(st.k, st.d, st.shock)?;
        let e = &ev.e;
        let risk = RiskMetrics::from_eval(e, ev.extrapolated);
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
            transfer: e.tau_l * e.w * e.l + e.tau_d * e.d_next / e.r + e.tau_k * e.q * e.k_next,
            expected_return: risk.expected_return,
            k_next: e.k_next,
            d_next: e.d_next,
            mu_next: 0.0,
            extrapolated: ev.extrapolated,
        })
    }
}
