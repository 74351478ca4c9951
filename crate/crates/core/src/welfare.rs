//! Consumption-equivalent welfare, regime comparisons over slices of the
//! state space, and a three-way decomposition of welfare gains.

use std::io::Write;

use rayon::prelude::*;

use crate::equilibrium::system::point_eval;
use crate::equilibrium::EquilibriumSolution;
use crate::error::{Error, Result};
use crate::first_best::FirstBestSolution;
use crate::model::primitives::crra_g;
use crate::model::ModelParams;
use crate::ramsey::RamseySolution;
use crate::simulation::{SimPath, Var};
use crate::spline::SplineField;

/// `omega = ((1 - beta)(1 - gamma) V)^(1/(1 - gamma))`, or `exp((1 - beta) V)`
/// under log utility.
pub fn consumption_equivalent(v: f64, p: &ModelParams) -> Result<f64> {
    if p.gamma == 1.0 {
        let w = ((1.0 - p.beta) * v).exp();
        return if w > 0.0 && w.is_finite() {
            Ok(w)
        } else {
            Err(Error::domain("consumption equivalent", format!("value {v} out of range")))
        };
    }
    let base = (1.0 - p.beta) * (1.0 - p.gamma) * v;
    if !(base > 0.0 && base.is_finite()) {
        return Err(Error::domain(
            "consumption equivalent",
            format!("(1 - beta)(1 - gamma) V = {base} must be positive"),
        ));
    }
    Ok(base.powf(1.0 / (1.0 - p.gamma)))
}

/// Planner value of consuming `omega` forever with no labor.
pub fn value_of_consumption_equivalent(omega: f64, p: &ModelParams) -> Result<f64> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::domain("consumption equivalent", format!("omega = {omega} must be positive")));
    }
    Ok(crra_g(omega, p.gamma).0 / (1.0 - p.beta))
}

/// Anything that can report the planner objective
/// `lambda V_e + (1 - lambda) V_w` at `(K, D, shock)`.
pub trait PlannerValue: Sync {
    fn label(&self) -> String;
    fn params(&self) -> &ModelParams;
    /// Value and an extrapolation flag.
    fn planner_value(&self, k: f64, d: f64, shock: usize) -> Result<(f64, bool)>;
}

impl PlannerValue for FirstBestSolution {
    fn label(&self) -> String {
        "first-best".into()
    }
    fn params(&self) -> &ModelParams {
        &self.params
    }
    fn planner_value(&self, k: f64, d: f64, shock: usize) -> Result<(f64, bool)> {
        Ok(self.value(k, d, shock))
    }
}

impl PlannerValue for RamseySolution {
    fn label(&self) -> String {
        "ramsey".into()
    }
    fn params(&self) -> &ModelParams {
        &self.params
    }
    /// Evaluated without prior promises.
    fn planner_value(&self, k: f64, d: f64, shock: usize) -> Result<(f64, bool)> {
        self.welfare(k, d, shock)
    }
}

/// Planner objective under a competitive equilibrium, obtained by policy
/// evaluation over the equilibrium grid.
pub struct EquilibriumWelfare<'a> {
    pub sol: &'a EquilibriumSolution,
    pub label: String,
    pub v: SplineField,
    pub iterations: usize,
}

impl<'a> EquilibriumWelfare<'a> {
    pub fn new(sol: &'a EquilibriumSolution, label: &str, tol: f64, max_iter: usize) -> Result<Self> {
        let p = &sol.params;
        let chain = &sol.chain;
        let grid = sol.grid().clone();
        let m = grid.size();
        let ns = chain.len();
        let n = m * ns;
        let lam = p.lambda_weight;
        // Flow objective and successor stencils at every node.
        let nodes: Vec<Result<(f64, Vec<(f64, Vec<(usize, f64)>)>)>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let s = j / m;
                let x = grid.point(j % m);
                let (k, d) = (x[0], x[0] * x[1]);
                let st = sol.state(k, d, s)?;
                let e = st.e;
                let (ue, _) = crra_g(e.c_e, p.gamma);
                let (uw, _) = crra_g(e.c_w, p.gamma);
                let flow = lam * ue + (1.0 - lam) * (uw - p.psi * e.l.powf(1.0 + p.nu) / (1.0 + p.nu));
                let succ = chain.p[s]
                    .iter()
                    .enumerate()
                    .filter(|(_, &w)| w > 0.0)
                    .map(|(s2, &w)| {
                        let k2 = e.k_next * chain.zeta_values[s2];
                        let c = [grid.axis(0).soft_clamp(k2), grid.axis(1).soft_clamp(e.d_next / k2)];
                        let stc = grid.stencil(&c);
                        (w, (0..stc.len).map(|t| (s2 * m + stc.idx[t], stc.w[t])).collect())
                    })
                    .collect();
                Ok((flow, succ))
            })
            .collect();
        let nodes = nodes.into_iter().collect::<Result<Vec<_>>>()?;
        let mut v: Vec<f64> = nodes.iter().map(|(f, _)| f / (1.0 - p.beta)).collect();
        let mut field = SplineField::fit(grid.clone(), ns, &v)?;
        let mut iterations = 0;
        loop {
            let coeffs = field.coeffs();
            let new: Vec<f64> = nodes
                .par_iter()
                .map(|(flow, succ)| {
                    flow + p.beta
                        * succ
                            .iter()
                            .map(|(w, taps)| w * taps.iter().map(|&(c, t)| coeffs[c] * t).sum::<f64>())
                            .sum::<f64>()
                })
                .collect();
            let change = new.iter().zip(&v).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            v = new;
            field = SplineField::fit(grid.clone(), ns, &v)?;
            iterations += 1;
            if change < tol {
                break;
            }
            if iterations >= max_iter {
                return Err(Error::convergence(
                    "equilibrium welfare",
                    format!("change {change:.3e} after {iterations} iterations"),
                ));
            }
        }
        Ok(EquilibriumWelfare {
            sol,
            label: label.to_string(),
            v: field,
            iterations,
        })
    }
}

impl PlannerValue for EquilibriumWelfare<'_> {
    fn label(&self) -> String {
        self.label.clone()
    }
    fn params(&self) -> &ModelParams {
        &self.sol.params
    }
    fn planner_value(&self, k: f64, d: f64, shock: usize) -> Result<(f64, bool)> {
        self.v.eval(shock, &[k, d / k])
    }
}

/// A one-dimensional slice in `D` at fixed capital and shock.
#[derive(Debug, Clone, PartialEq)]
pub struct WelfareSlice {
    pub name: String,
    pub k: f64,
    pub shock: usize,
    pub d_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WelfareRow {
    pub d: f64,
    /// Consumption equivalents in the order of [`WelfareReport::regimes`].
    pub omega: Vec<f64>,
    pub extrapolated: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WelfareReport {
    pub slice: WelfareSlice,
    pub regimes: Vec<String>,
    pub rows: Vec<WelfareRow>,
}

impl WelfareReport {
    pub fn column(&self, regime: &str) -> Option<Vec<f64>> {
        let j = self.regimes.iter().position(|r| r == regime)?;
        Some(self.rows.iter().map(|r| r.omega[j]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# slice={}", self.slice.name)?;
        writeln!(w, "# k={}", self.slice.k)?;
        writeln!(w, "# shock={}", self.slice.shock)?;
        let mut head = vec!["d".to_string()];
        for r in &self.regimes {
            head.push(format!("omega_{r}"));
            head.push(format!("extrapolated_{r}"));
        }
        writeln!(w, "{}", head.join(","))?;
        for row in &self.rows {
            let mut cells = vec![format!("{:.12e}", row.d)];
            for (o, x) in row.omega.iter().zip(&row.extrapolated) {
                cells.push(format!("{o:.12e}"));
                cells.push((*x as u8).to_string());
            }
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Consumption equivalents of every regime along the slice.
pub fn regime_welfare_slice(regimes: &[&dyn PlannerValue], slice: &WelfareSlice) -> Result<WelfareReport> {
    let Some(first) = regimes.first() else {
        return Err(Error::Config("welfare slice needs at least one regime".into()));
    };
    let hash = first.params().hash();
    if let Some(r) = regimes.iter().find(|r| r.params().hash() != hash) {
        return Err(Error::Config(format!("regime {} has different parameters", r.label())));
    }
    let p = first.params();
    let rows = slice
        .d_values
        .iter()
        .map(|&d| {
            let mut row = WelfareRow {
                d,
                omega: Vec::with_capacity(regimes.len()),
                extrapolated: Vec::with_capacity(regimes.len()),
            };
            for r in regimes {
                let (v, x) = r.planner_value(slice.k, d, slice.shock)?;
                row.omega.push(consumption_equivalent(v, p)?);
                row.extrapolated.push(x);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WelfareReport {
        slice: slice.clone(),
        regimes: regimes.iter().map(|r| r.label()).collect(),
        rows,
    })
}

/// Additive split of a consumption-equivalent gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainsDecomposition {
    pub total: f64,
    pub efficiency: f64,
    pub redistribution: f64,
    pub insurance: f64,
}

/// Certainty-equivalent factors of one path: aggregate level, each agent's
/// consumption share, and each agent's risk adjustment, so that the agent's
/// certainty-equivalent consumption is `level * share * risk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathFactors {
    pub level: f64,
    /// `[expert, worker]`.
    pub share: [f64; 2],
    pub risk: [f64; 2],
}

fn inverse_utility(u: f64, gamma: f64) -> Result<f64> {
    let c = if gamma == 1.0 {
        u.exp()
    } else {
        ((1.0 - gamma) * u).powf(1.0 / (1.0 - gamma))
    };
    if c > 0.0 && c.is_finite() {
        Ok(c)
    } else {
        Err(Error::domain("certainty equivalent", format!("utility {u} has no consumption equivalent")))
    }
}

/// Factors of a simulated path, with discounting from its first recorded
/// date. The worker's labor disutility enters the worker's certainty
/// equivalent and hence the risk adjustment.
pub fn path_factors(path: &SimPath, p: &ModelParams) -> Result<PathFactors> {
    let (cw, ce, l) = (path.col(Var::Cw), path.col(Var::Ce), path.col(Var::L));
    if cw.is_empty() {
        return Err(Error::Config("empty path".into()));
    }
    let (mut wsum, mut ua, mut ue, mut uw, mut se, mut sw) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut disc = 1.0;
    for t in 0..cw.len() {
        let agg = cw[t] + ce[t];
        wsum += disc;
        ua += disc * crra_g(agg, p.gamma).0;
        ue += disc * crra_g(ce[t], p.gamma).0;
        uw += disc * (crra_g(cw[t], p.gamma).0 - p.psi * l[t].powf(1.0 + p.nu) / (1.0 + p.nu));
        se += disc * ce[t] / agg;
        sw += disc * cw[t] / agg;
        disc *= p.beta;
    }
    let level = inverse_utility(ua / wsum, p.gamma)?;
    let share = [se / wsum, sw / wsum];
    let ce_e = inverse_utility(ue / wsum, p.gamma)?;
    let ce_w = inverse_utility(uw / wsum, p.gamma)?;
    Ok(PathFactors {
        level,
        share,
        risk: [ce_e / (level * share[0]), ce_w / (level * share[1])],
    })
}

/// Planner consumption equivalent implied by a set of factors.
pub fn factors_omega(f: &PathFactors, p: &ModelParams) -> Result<f64> {
    let lam = p.lambda_weight;
    let u = |i: usize| crra_g(f.level * f.share[i] * f.risk[i], p.gamma).0;
    let v = (lam * u(0) + (1.0 - lam) * u(1)) / (1.0 - p.beta);
    consumption_equivalent(v, p)
}

/// Decomposes the gain of `path_b` over `path_a` by switching, in order,
/// the aggregate level, the shares and the risk adjustments from `a` to `b`.
/// The three parts sum to the total by construction.
pub fn decompose_gains(path_a: &SimPath, path_b: &SimPath, p: &ModelParams) -> Result<GainsDecomposition> {
    let fa = path_factors(path_a, p)?;
    let fb = path_factors(path_b, p)?;
    let w0 = factors_omega(&fa, p)?;
    let w1 = factors_omega(&PathFactors { level: fb.level, ..fa }, p)?;
    let w2 = factors_omega(
        &PathFactors {
            level: fb.level,
            share: fb.share,
            risk: fa.risk,
        },
        p,
    )?;
    let w3 = factors_omega(&fb, p)?;
    Ok(GainsDecomposition {
        total: w3 - w0,
        efficiency: w1 - w0,
        redistribution: w2 - w1,
        insurance: w3 - w2,
    })
}

/// Largest absolute residual of the equilibrium conditions when the
/// planner's allocation at a state is priced with the backed-out taxes:
/// the competitive system is evaluated with the plan's successor
/// allocations as the continuation.
pub fn decentralization_residual(sol: &RamseySolution, k: f64, d: f64, mu: f64, shock: usize) -> Result<f64> {
    use crate::equilibrium::StateTaxes;
    use crate::ramsey::system::{planner_labor, RamseyNext};
    let p = &sol.params;
    let e = sol.stage_saddle(k, d, mu, shock)?;
    let rates = [e.tau_l, e.tau_d, e.tau_k];
    let taxes = StateTaxes {
        rates: move |_: f64, _: f64, _: usize| rates,
        label: "backed-out".into(),
    };
    let eta = e.eta;
    let pol = &sol.policies;
    let mut next = |s2: usize, k2: f64, d2: f64| {
        let (cw, ce, eta2) = RamseyNext::<f64>::next(&mut pol.next(), s2, k2, d2, eta);
        (cw, ce, planner_labor(p, sol.chain.z_values[s2], k2, ce, eta2))
    };
    let ev = point_eval::<f64>(p, &sol.chain, &taxes, k, d, shock, [e.c_w, e.c_e, e.d_next / k], &mut next);
    Ok(ev.res.iter().fold(0.0f64, |m, r| m.max(r.abs())))
}
