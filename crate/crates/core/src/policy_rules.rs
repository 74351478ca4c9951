//! The two-parameter deposit tax rule `tau_d = tau_d1 D (D/(qK) - tau_d2)`:
//! equilibrium under the rule and its optimization under an ergodic-average
//! welfare criterion.

use std::io::Write;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use crate::equilibrium::SimpleRule;
use crate::equilibrium::{solve_equilibrium_from, EquilibriumSolution};
use crate::error::{Error, Result};
use crate::simulation::SimState;
use crate::welfare::{consumption_equivalent, EquilibriumWelfare, PlannerValue};

/// Deposit tax rate of the rule at `(K, D)` and capital price `q`.
pub fn rule_tax(rule: &SimpleRule, k: f64, d: f64, q: f64) -> f64 {
    rule.rate(k, d, q)
}

/// Competitive equilibrium under the rule, warm-started from `base`
/// (normally the no-policy solution at the same parameters). Rejects
/// solutions in which the deposit tax reaches one at a node.
pub fn solve_rule_equilibrium(base: &EquilibriumSolution, rule: SimpleRule) -> Result<EquilibriumSolution> {
    let sol = solve_equilibrium_from(base, Arc::new(rule))?;
    let grid = sol.grid().clone();
    for s in 0..sol.chain.len() {
        for j in 0..grid.size() {
            let x = grid.point(j);
            let (k, d) = (x[0], x[0] * x[1]);
            let q = sol.state(k, d, s)?.e.q;
            let t = rule.rate(k, d, q);
            if !(t < 1.0) {
                return Err(Error::Invariant(format!("deposit tax {t} >= 1 at K={k}, D={d}, shock={s}")));
            }
        }
    }
    Ok(sol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSearchConfig {
    pub tau_d1: (f64, f64),
    pub tau_d2: (f64, f64),
    /// Points per coordinate of the coarse grid.
    pub grid_points: usize,
    pub simplex_tol: f64,
    pub simplex_max_iter: usize,
    /// States drawn from the ergodic sample for the criterion.
    pub n_states: usize,
    pub seed: u64,
    pub value_tol: f64,
}

impl Default for RuleSearchConfig {
    fn default() -> Self {
        RuleSearchConfig {
            tau_d1: (0.0, 0.2),
            tau_d2: (0.4, 0.9),
            grid_points: 11,
            simplex_tol: 1e-4,
            simplex_max_iter: 60,
            n_states: 200,
            seed: 7,
            value_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub index: usize,
    pub rule: SimpleRule,
    pub criterion: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct RuleOptimum {
    pub rule: SimpleRule,
    pub criterion: f64,
    /// Criterion of the zero rule, evaluated on the same states.
    pub baseline: f64,
    pub audit: Vec<AuditEntry>,
}

impl RuleOptimum {
    pub fn write_audit_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "candidate,tau_d1,tau_d2,criterion,status")?;
        for a in &self.audit {
            let c = a.criterion.map(|v| format!("{v:.12e}")).unwrap_or_default();
            writeln!(w, "{},{:.10e},{:.10e},{c},{}", a.index, a.rule.tau_d1, a.rule.tau_d2, a.status)?;
        }
        Ok(())
    }
}

/// Picks `n` states from an ergodic sample without replacement.
pub fn draw_states(sample: &[SimState], n: usize, seed: u64) -> Vec<SimState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..sample.len()).collect();
    let n = n.min(sample.len());
    for i in 0..n {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..n].iter().map(|&i| sample[i]).collect()
}

/// Average consumption equivalent of a welfare evaluator over `states`.
pub fn ergodic_criterion(w: &dyn PlannerValue, states: &[SimState]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Config("criterion needs at least one state".into()));
    }
    let mut sum = 0.0;
    for st in states {
        let (v, _) = w.planner_value(st.k, st.d, st.shock)?;
        sum += consumption_equivalent(v, w.params())?;
    }
    Ok(sum / states.len() as f64)
}

struct Search<'a> {
    base: &'a EquilibriumSolution,
    states: Vec<SimState>,
    cfg: &'a RuleSearchConfig,
    audit: Vec<AuditEntry>,
}

impl Search<'_> {
    fn eval(&mut self, rule: SimpleRule) -> Option<f64> {
        let index = self.audit.len();
        let out = if rule.tau_d1 == 0.0 {
            EquilibriumWelfare::new(self.base, "rule", self.cfg.value_tol, 100_000)
                .and_then(|w| ergodic_criterion(&w, &self.states))
        } else {
            solve_rule_equilibrium(self.base, rule).and_then(|sol| {
                let w = EquilibriumWelfare::new(&sol, "rule", self.cfg.value_tol, 100_000)?;
                ergodic_criterion(&w, &self.states)
            })
        };
        let (criterion, status) = match out {
            Ok(c) => (Some(c), "ok".to_string()),
            Err(e) => (None, e.to_string().replace(',', ";")),
        };
        self.audit.push(AuditEntry {
            index,
            rule,
            criterion,
            status,
        });
        criterion
    }

    /// Objective for the simplex: negated criterion, failures ranked last.
    fn cost(&mut self, x: [f64; 2]) -> f64 {
        let (a, b) = (self.cfg.tau_d1, self.cfg.tau_d2);
        if x[0] < a.0 || x[0] > a.1 || x[1] < b.0 || x[1] > b.1 {
            return f64::INFINITY;
        }
        self.eval(SimpleRule::new(x[0], x[1])).map(|c| -c).unwrap_or(f64::INFINITY)
    }
}

/// Coarse grid search over the configured box followed by a Nelder-Mead
/// polish from the best grid point. `sample` is the no-policy ergodic sample.
pub fn optimize_rule(base: &EquilibriumSolution, sample: &[SimState], cfg: &RuleSearchConfig) -> Result<RuleOptimum> {
    let states = draw_states(sample, cfg.n_states, cfg.seed);
    let mut search = Search {
        base,
        states,
        cfg,
        audit: Vec::new(),
    };
    let baseline = search
        .eval(SimpleRule::new(0.0, cfg.tau_d2.0))
        .ok_or_else(|| Error::convergence("rule search", "no-policy criterion failed"))?;
    let n = cfg.grid_points.max(2);
    let lin = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    let mut best = ([0.0, cfg.tau_d2.0], -baseline);
    for i in 0..n {
        for j in 0..n {
            let x = [lin(cfg.tau_d1, i), lin(cfg.tau_d2, j)];
            if x[0] == 0.0 {
                continue;
            }
            let c = search.cost(x);
            if c < best.1 {
                best = (x, c);
            }
        }
    }
    let steps = [
        (cfg.tau_d1.1 - cfg.tau_d1.0) / (n - 1) as f64 * 0.5,
        (cfg.tau_d2.1 - cfg.tau_d2.0) / (n - 1) as f64 * 0.5,
    ];
    let (x, c) = nelder_mead(|x| search.cost(x), best.0, best.1, steps, cfg.simplex_tol, cfg.simplex_max_iter);
    let (x, c) = if c < best.1 { (x, c) } else { best };
    Ok(RuleOptimum {
        rule: SimpleRule::new(x[0], x[1]),
        criterion: -c,
        baseline,
        audit: search.audit,
    })
}

/// Two-dimensional Nelder-Mead minimization with standard coefficients;
/// stops when the simplex spans less than `tol` in both coordinates.
pub fn nelder_mead(
    mut f: impl FnMut([f64; 2]) -> f64,
    x0: [f64; 2],
    f0: f64,
    step: [f64; 2],
    tol: f64,
    max_iter: usize,
) -> ([f64; 2], f64) {
    let mut s = [
        (x0, f0),
        ([x0[0] + step[0], x0[1]], 0.0),
        ([x0[0], x0[1] + step[1]], 0.0),
    ];
    s[1].1 = f(s[1].0);
    s[2].1 = f(s[2].0);
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..max_iter {
        s.sort_by(|a, b| a.1.total_cmp(&b.1));
        let span = (0..2).map(|d| {
            let v = s.iter().map(|p| p.0[d]);
            v.clone().fold(f64::NEG_INFINITY, f64::max) - v.fold(f64::INFINITY, f64::min)
        });
        if span.fold(0.0f64, f64::max) < tol {
            break;
        }
        let c = lerp(s[0].0, s[1].0, 0.5);
        let xr = lerp(s[2].0, c, 2.0);
        let fr = f(xr);
        if fr < s[0].1 {
            let xe = lerp(s[2].0, c, 3.0);
            let fe = f(xe);
            s[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < s[1].1 {
            s[2] = (xr, fr);
        } else {
            let xc = if fr < s[2].1 { lerp(s[2].0, c, 1.5) } else { lerp(s[2].0, c, 0.5) };
            let fc = f(xc);
            if fc < s[2].1.min(fr) {
                s[2] = (xc, fc);
            } else {
                for i in 1..3 {
                    let x = lerp(s[0].0, s[i].0, 0.5);
                    s[i] = (x, f(x));
                }
            }
        }
    }
    s.sort_by(|a, b| a.1.total_cmp(&b.1));
    s[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_tax_arithmetic() {
        let r = SimpleRule::new(0.1, 0.4);
        assert!((rule_tax(&r, 2.0, 1.0, 1.0) - 0.01).abs() < 1e-15);
        assert_eq!(rule_tax(&r, 2.0, 0.0, 1.0), 0.0);
        assert_eq!(rule_tax(&r, 2.0, 0.8, 1.0), 0.0);
        assert!(rule_tax(&r, 2.0, 0.5, 1.0) < 0.0);
        assert!(rule_tax(&r, 2.0, 1.2, 1.0) > 0.0);
    }

    #[test]
    fn simplex_finds_quadratic_minimum() {
        let f = |x: [f64; 2]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.1).powi(2) + 0.5 * x[0] * x[1];
        let (x, _) = nelder_mead(f, [1.0, 1.0], f([1.0, 1.0]), [0.2, 0.2], 1e-9, 500);
        // Stationary point of the quadratic.
        let det = 2.0 * 4.0 - 0.25;
        let xs = [(0.6 * 4.0 + 0.5 * 0.4) / det, (-0.4 * 2.0 - 0.5 * 0.6) / det];
        assert!((x[0] - xs[0]).abs() < 1e-6 && (x[1] - xs[1]).abs() < 1e-6, "{x:?} vs {xs:?}");
    }

    #[test]
    fn draw_states_is_deterministic_subset() {
        let sample: Vec<SimState> = (0..50)
            .map(|i| SimState {
                k: i as f64,
                d: 0.0,
                mu: 0.0,
                shock: 0,
            })
            .collect();
        let a = draw_states(&sample, 10, 3);
        let b = draw_states(&sample, 10, 3);
        assert_eq!(a, b);
        let mut ks: Vec<i64> = a.iter().map(|s| s.k as i64).collect();
        ks.sort();
        ks.dedup();
        assert_eq!(ks.len(), 10);
    }
}
