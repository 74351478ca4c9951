use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::keyvalue::fmt_f64;
use crate::model::{ModelParams, ShockChain};

/// Aggregate state seen by a regime: capital, deposits, the lagged
/// implementability multiplier (zero outside Ramsey runs) and the shock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub k: f64,
    pub d: f64,
    pub mu: f64,
    pub shock: usize,
}

/// One date of a simulated path.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Record {
    pub c_w: f64,
    pub c_e: f64,
    pub l: f64,
    pub i: f64,
    pub y: f64,
    /// Gross quarterly riskless rate.
    pub r: f64,
    pub q: f64,
    pub tau_l: f64,
    pub tau_d: f64,
    pub tau_k: f64,
    pub transfer: f64,
    /// Expected gross return on capital.
    pub expected_return: f64,
    /// Pre-shock next-period capital; realized capital is `zeta' k_next`.
    pub k_next: f64,
    pub d_next: f64,
    pub mu_next: f64,
    /// Current state lies outside the regime's grid.
    pub extrapolated: bool,
}

/// A solved policy regime that can be stepped forward.
pub trait Regime: Sync {
    fn params(&self) -> &ModelParams;
    fn chain(&self) -> &ShockChain;
    fn label(&self) -> String;
    /// Starting state used when the caller supplies none.
    fn initial_state(&self) -> SimState;
    fn step(&self, state: &SimState) -> Result<Record>;
}

/// Variables stored per date, in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(usize)]
pub enum Var {
    K,
    D,
    Mu,
    Cw,
    Ce,
    L,
    I,
    Y,
    R,
    Q,
    Leverage,
    TauL,
    TauD,
    TauK,
    Transfer,
    RiskPremium,
}

impl Var {
    pub const ALL: [Var; 16] = [
        Var::K,
        Var::D,
        Var::Mu,
        Var::Cw,
        Var::Ce,
        Var::L,
        Var::I,
        Var::Y,
        Var::R,
        Var::Q,
        Var::Leverage,
        Var::TauL,
        Var::TauD,
        Var::TauK,
        Var::Transfer,
        Var::RiskPremium,
    ];
    pub const COUNT: usize = 16;

    pub fn name(self) -> &'static str {
        match self {
            Var::K => "K",
            Var::D => "D",
            Var::Mu => "mu",
            Var::Cw => "C_w",
            Var::Ce => "C_e",
            Var::L => "L",
            Var::I => "I",
            Var::Y => "Y",
            Var::R => "r_gross_quarterly",
            Var::Q => "q",
            Var::Leverage => "leverage",
            Var::TauL => "tau_l",
            Var::TauD => "tau_d",
            Var::TauK => "tau_k",
            Var::Transfer => "T",
            Var::RiskPremium => "risk_premium_quarterly",
        }
    }
}

/// Columnar storage of the post-burn-in part of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pub label: String,
    pub seed: u64,
    pub burn_in: usize,
    pub shocks: Vec<usize>,
    pub disaster: Vec<bool>,
    columns: Vec<Vec<f64>>,
    /// Largest resource-constraint gap relative to output over the path.
    pub max_resource_gap: f64,
}

impl SimPath {
    fn with_capacity(label: String, seed: u64, burn_in: usize, n: usize) -> Self {
        SimPath {
            label,
            seed,
            burn_in,
            shocks: Vec::with_capacity(n),
            disaster: Vec::with_capacity(n),
            columns: (0..Var::COUNT).map(|_| Vec::with_capacity(n)).collect(),
            max_resource_gap: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.shocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shocks.is_empty()
    }

    pub fn col(&self, v: Var) -> &[f64] {
        &self.columns[v as usize]
    }

    /// Assembles a path from raw columns (used for synthetic tests and for
    /// transformed paths).
    pub fn from_columns(label: &str, columns: Vec<Vec<f64>>, shocks: Vec<usize>, disaster: Vec<bool>) -> Result<Self> {
        if columns.len() != Var::COUNT || columns.iter().any(|c| c.len() != shocks.len()) || disaster.len() != shocks.len() {
            return Err(Error::Config("path columns have inconsistent lengths".into()));
        }
        Ok(SimPath {
            label: label.to_string(),
            seed: 0,
            burn_in: 0,
            shocks,
            disaster,
            columns,
            max_resource_gap: 0.0,
        })
    }

    /// Sub-path `[a, b)`.
    pub fn slice(&self, a: usize, b: usize) -> SimPath {
        SimPath {
            label: self.label.clone(),
            seed: self.seed,
            burn_in: self.burn_in + a,
            shocks: self.shocks[a..b].to_vec(),
            disaster: self.disaster[a..b].to_vec(),
            columns: self.columns.iter().map(|c| c[a..b].to_vec()).collect(),
            max_resource_gap: self.max_resource_gap,
        }
    }

    fn push(&mut self, st: &SimState, rec: &Record, disaster: bool) {
        let vals = [
            st.k,
            st.d,
            st.mu,
            rec.c_w,
            rec.c_e,
            rec.l,
            rec.i,
            rec.y,
            rec.r,
            rec.q,
            st.d / (rec.q * st.k),
            rec.tau_l,
            rec.tau_d,
            rec.tau_k,
            rec.transfer,
            rec.expected_return - rec.r,
        ];
        for (c, v) in self.columns.iter_mut().zip(vals) {
            c.push(v);
        }
        self.shocks.push(st.shock);
        self.disaster.push(disaster);
        let gap = (rec.y - rec.i - rec.c_w - rec.c_e).abs() / rec.y;
        self.max_resource_gap = self.max_resource_gap.max(gap);
    }

    /// Writes the path as CSV: `t, shock, disaster`, then [`Var::ALL`] in
    /// order, then the annualized riskless rate `r^4 - 1`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t,shock,disaster")?;
        for v in Var::ALL {
            write!(w, ",{}", v.name())?;
        }
        writeln!(w, ",r_annualized")?;
        for t in 0..self.len() {
            write!(w, "{},{},{}", t, self.shocks[t], self.disaster[t] as u8)?;
            for c in &self.columns {
                write!(w, ",{}", fmt_f64(c[t]))?;
            }
            writeln!(w, ",{}", fmt_f64(self.col(Var::R)[t].powi(4) - 1.0))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Recorded periods (after burn-in).
    pub periods: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            periods: 1_000_000,
            burn_in: 10_000,
            seed: 1,
        }
    }
}

/// Shock indices for `n` dates starting from `s0` (date 0 is `s0`), drawn
/// with ChaCha8 seeded by `seed`.
pub fn draw_shocks(chain: &ShockChain, s0: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut s = s0;
    for t in 0..n {
        if t > 0 {
            s = chain.next_state(s, rng.random::<f64>());
        }
        out.push(s);
    }
    out
}

/// Simulates `burn_in + periods` dates under `regime`.
pub fn simulate(regime: &dyn Regime, cfg: &SimConfig) -> Result<SimPath> {
    let init = regime.initial_state();
    let shocks = draw_shocks(regime.chain(), init.shock, cfg.burn_in + cfg.periods, cfg.seed);
    let mut path = simulate_shocks(regime, init, &shocks, cfg.burn_in)?;
    path.seed = cfg.seed;
    Ok(path)
}

/// Simulates along a given shock sequence; `init.shock` is replaced by
/// `shocks[0]`. Records dates from `burn_in` on; leaving the grid after
/// burn-in is an error.
pub fn simulate_shocks(regime: &dyn Regime, init: SimState, shocks: &[usize], burn_in: usize) -> Result<SimPath> {
    if shocks.len() <= burn_in {
        return Err(Error::Config(format!(
            "path length {} must exceed burn-in {burn_in}",
            shocks.len()
        )));
    }
    let chain = regime.chain();
    let mut path = SimPath::with_capacity(regime.label(), 0, burn_in, shocks.len() - burn_in);
    let mut st = SimState {
        shock: shocks[0],
        ..init
    };
    for t in 0..shocks.len() {
        st.shock = shocks[t];
        let rec = regime.step(&st).map_err(|e| match e {
            Error::Convergence { stage, detail } => Error::Convergence {
                stage: format!("simulation date {t}: {stage}"),
                detail,
            },
            other => other,
        })?;
        if t >= burn_in {
            if rec.extrapolated {
                return Err(Error::domain(
                    "simulation",
                    format!(
                        "state left the grid at date {t} (K={}, D={}, mu={}, shock={}); enlarge the grid",
                        st.k, st.d, st.mu, st.shock
                    ),
                ));
            }
            path.push(&st, &rec, chain.is_disaster(st.shock));
        }
        if t + 1 < shocks.len() {
            let s2 = shocks[t + 1];
            st = SimState {
                k: chain.zeta_values[s2] * rec.k_next,
                d: rec.d_next,
                mu: rec.mu_next,
                shock: s2,
            };
        }
    }
    Ok(path)
}
