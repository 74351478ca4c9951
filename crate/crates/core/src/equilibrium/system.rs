//! Equilibrium conditions at a single state.
//!
//! The unknowns at a state are worker consumption `C_w`, expert consumption
//! `C_e` and next-period deposits per unit of current capital `D'/K`. Labor
//! follows from the worker's labor supply condition, investment from the
//! resource constraint, the price of capital from the investment optimality
//! condition, and the riskless rate from the worker's Euler equation. What
//! remains are the expert Euler equation, the capital arbitrage condition
//! and the worker budget.

use nalgebra::{Matrix3, Vector3};

use crate::equilibrium::taxes::TaxSchedule;
use crate::error::{Error, Result};
use crate::model::primitives::{capital_price_and_profit_g, capital_production_g, production_g};
use crate::model::{ModelParams, ShockChain};
use crate::real::{Dual, Real};

/// Labor implied by the worker's labor supply condition
/// `psi L^nu C_w^gamma = (1 - tau_l) F_L`.
#[inline]
pub fn labor_supply<T: Real>(p: &ModelParams, z: f64, k: T, c_w: T, tau_l: f64) -> T {
    let rhs = k.powf(p.alpha) * c_w.powf(-p.gamma) * ((1.0 - tau_l) * (1.0 - p.alpha) * z.exp() / p.psi);
    rhs.powf(1.0 / (p.nu + p.alpha))
}

/// Everything computed at a state from the three unknowns.
#[derive(Debug, Clone, Copy)]
pub struct PointEval<T> {
    pub res: [T; 3],
    pub c_w: T,
    pub c_e: T,
    pub l: T,
    pub y: T,
    pub w: T,
    pub r_k: T,
    pub i: T,
    pub q: T,
    pub profit: T,
    /// Pre-shock capital carried into next period, `K (Phi(I/K) + 1 - delta)`.
    pub k_next: T,
    pub d_next: T,
    /// Gross riskless rate.
    pub r: T,
    pub tau_l: f64,
    pub tau_d: T,
    pub tau_k: T,
    pub e_uw: T,
    pub e_ue: T,
    pub e_ret: T,
    /// Expected gross payoff per unit of capital, `E[zeta'(R' + (1-delta) q' + Pi')]`.
    pub e_payoff: T,
    /// First and second conditional moments of next-period log consumption,
    /// `[E ln C_w', E ln C_e', E (ln C_w')^2, E (ln C_e')^2]`.
    pub log_moments: [T; 4],
}

/// Next-period allocation at a successor state: `(C_w', C_e', L')`.
pub trait NextAllocation<T> {
    fn next(&mut self, shock: usize, k: T, d: T) -> (T, T, T);
}

impl<T, F: FnMut(usize, T, T) -> (T, T, T)> NextAllocation<T> for F {
    fn next(&mut self, shock: usize, k: T, d: T) -> (T, T, T) {
        self(shock, k, d)
    }
}

/// Evaluates the equilibrium conditions at `(K, D, shock)` for unknowns
/// `x = (C_w, C_e, D'/K)`.
pub fn point_eval<T: Real>(
    p: &ModelParams,
    chain: &ShockChain,
    taxes: &dyn TaxSchedule,
    k: f64,
    d: f64,
    s: usize,
    x: [T; 3],
    next: &mut impl NextAllocation<T>,
) -> PointEval<T> {
    let [c_w, c_e, dn] = x;
    let z = chain.z_values[s];
    let kt = T::cst(k);
    let tau_l = taxes.labor(k, d, s);
    let l = labor_supply(p, z, kt, c_w, tau_l);
    let (y, r_k, w) = production_g(z, kt, l, p);
    let i = y - c_w - c_e;
    let inv = i / k;
    let (phi, _) = capital_production_g(inv, p);
    let (q, profit) = capital_price_and_profit_g(inv, p);
    let k_next = (phi + (1.0 - p.delta)) * k;
    let d_next = dn * k;

    let zero = T::cst(0.0);
    let (mut e_uw, mut e_ue, mut e_ret, mut e_payoff) = (zero, zero, zero, zero);
    let mut log_moments = [zero; 4];
    for (s2, &prob) in chain.p[s].iter().enumerate() {
        if prob == 0.0 {
            continue;
        }
        let zeta = chain.zeta_values[s2];
        let k2 = k_next * zeta;
        let (cw2, ce2, l2) = next.next(s2, k2, d_next);
        let (y2, rk2, _) = production_g(chain.z_values[s2], k2, l2, p);
        let (q2, pi2) = capital_price_and_profit_g((y2 - cw2 - ce2) / k2, p);
        let uw = cw2.powf(-p.gamma);
        let ue = ce2.powf(-p.gamma);
        e_uw += uw * prob;
        e_ue += ue * prob;
        let payoff = (rk2 + q2 * (1.0 - p.delta) + pi2) * (prob * zeta);
        e_ret += ue * payoff;
        e_payoff += payoff;
        let (lw, le) = (cw2.ln(), ce2.ln());
        log_moments[0] += lw * prob;
        log_moments[1] += le * prob;
        log_moments[2] += lw * lw * prob;
        log_moments[3] += le * le * prob;
    }
    let uw = c_w.powf(-p.gamma);
    let ue = c_e.powf(-p.gamma);
    let r = uw / (e_uw * p.beta);
    let (td, dtd) = taxes.deposit(k, d, s, q.re());
    let tau_d = q.chain(td, dtd);
    let (tk, dtk) = taxes.capital(k, d, s, q.re());
    let tau_k = q.chain(tk, dtk);

    let res0 = T::cst(1.0) - r * e_ue * p.beta / ((-tau_d + 1.0) * ue);
    let res1 = T::cst(1.0) - e_ret * p.beta / ((tau_k + 1.0) * q * ue);
    let res2 = (d_next / r + c_w - d - w * l * (1.0 - tau_l)) / y;
    PointEval {
        res: [res0, res1, res2],
        c_w,
        c_e,
        l,
        y,
        w,
        r_k,
        i,
        q,
        profit,
        k_next,
        d_next,
        r,
        tau_l,
        tau_d,
        tau_k,
        e_uw,
        e_ue,
        e_ret,
        e_payoff,
        log_moments,
    }
}

fn finite3(r: &[f64; 3]) -> bool {
    r.iter().all(|v| v.is_finite())
}

fn admissible(x: &[f64; 3]) -> bool {
    x[0] > 0.0 && x[1] > 0.0 && x.iter().all(|v| v.is_finite())
}

pub struct NewtonOutcome {
    pub x: [f64; 3],
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Newton solve of the three point conditions.
pub fn solve_point<C>(
    p: &ModelParams,
    chain: &ShockChain,
    taxes: &dyn TaxSchedule,
    k: f64,
    d: f64,
    s: usize,
    guess: [f64; 3],
    next: &mut C,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonOutcome>
where
    C: NextAllocation<Dual<3>> + NextAllocation<f64>,
{
    let eval_f = |x: [f64; 3], next: &mut C| point_eval::<f64>(p, chain, taxes, k, d, s, x, next).res;
    let mut x = guess;
    if !admissible(&x) {
        return Err(Error::domain("equilibrium point", format!("invalid guess {x:?} at K={k}, D={d}, shock={s}")));
    }
    let mut r = eval_f(x, next);
    if !finite3(&r) {
        return Err(Error::domain("equilibrium point", format!("non-finite residual at guess, K={k}, D={d}, shock={s}")));
    }
    let norm = |r: &[f64; 3]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for it in 0..max_iter {
        if norm(&r) < tol {
            return Ok(NewtonOutcome {
                x,
                iterations: it,
                residual: norm(&r),
            });
        }
        let xd = Dual::<3>::vars(x);
        let ev = point_eval(p, chain, taxes, k, d, s, xd, next);
        let mut jac = Matrix3::<f64>::zeros();
        let mut rhs = Vector3::<f64>::zeros();
        for i in 0..3 {
            rhs[i] = -ev.res[i].v;
            for j in 0..3 {
                jac[(i, j)] = ev.res[i].d[j];
            }
        }
        let step = jac.lu().solve(&rhs).ok_or_else(|| {
            Error::convergence("equilibrium point", format!("singular Jacobian at K={k}, D={d}, shock={s}"))
        })?;
        let mut t = 1.0;
        let base = r.iter().map(|v| v * v).sum::<f64>();
        let mut accepted = false;
        for _ in 0..40 {
            let trial = [x[0] + t * step[0], x[1] + t * step[1], x[2] + t * step[2]];
            if admissible(&trial) {
                let rt = eval_f(trial, next);
                if finite3(&rt) && rt.iter().map(|v| v * v).sum::<f64>() <= (1.0 - 1e-4 * t) * base {
                    x = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if norm(&r) < tol.max(1e-13) * 100.0 {
                return Ok(NewtonOutcome {
                    x,
                    iterations: it,
                    residual: norm(&r),
                });
            }
            return Err(Error::convergence(
                "equilibrium point",
                format!("line search failed at K={k}, D={d}, shock={s}, residual {:.3e}", norm(&r)),
            ));
        }
    }
    if norm(&r) < tol {
        Ok(NewtonOutcome {
            x,
            iterations: max_iter,
            residual: norm(&r),
        })
    } else {
        Err(Error::convergence(
            "equilibrium point",
            format!("no convergence at K={k}, D={d}, shock={s}, residual {:.3e}", norm(&r)),
        ))
    }
}
