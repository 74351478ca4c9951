//! Planner first-order conditions at a single state of the recursive
//! saddle-point problem.
//!
//! The state is `(K, D, mu, shock)`, with `mu` the multiplier promised to
//! workers last period. Unknowns are `(C_w, C_e, D'/K, eta)`, `eta` being
//! the multiplier on today's implementability constraint. The resource
//! multiplier is `M = lambda C_e^-gamma`; labor then follows in closed form
//! from its own condition and investment from the resource constraint.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::model::primitives::{capital_price_and_profit_g, capital_production_g, crra_g, production_g};
use crate::model::{ModelParams, ShockChain};
use crate::real::{Dual, Real};

/// Labor from the planner's labor condition
/// `psi L^nu ((1 - lambda) - eta (1 + nu)) = M F_L`.
/// Non-finite when `eta (1 + nu) >= 1 - lambda`.
#[inline]
pub fn planner_labor<T: Real>(p: &ModelParams, z: f64, k: T, c_e: T, eta: T) -> T {
    let wedge = -eta * (1.0 + p.nu) + (1.0 - p.lambda_weight);
    if wedge.re() <= 0.0 {
        return T::cst(f64::NAN);
    }
    let m = c_e.powf(-p.gamma) * p.lambda_weight;
    let rhs = m * k.powf(p.alpha) * ((1.0 - p.alpha) * z.exp() / p.psi) / wedge;
    rhs.powf(1.0 / (p.nu + p.alpha))
}

/// Successor policies `(C_w', C_e', eta')` at post-shock capital `K'`,
/// deposits `D'` and promised multiplier `mu' = eta`.
pub trait RamseyNext<T> {
    fn next(&mut self, shock: usize, k: T, d: T, mu: T) -> (T, T, T);
}

impl<T, F: FnMut(usize, T, T, T) -> (T, T, T)> RamseyNext<T> for F {
    fn next(&mut self, shock: usize, k: T, d: T, mu: T) -> (T, T, T) {
        self(shock, k, d, mu)
    }
}

/// Soft bounds on next-period deposits per unit of pre-shock capital.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepositBounds {
    pub lo: f64,
    pub hi: f64,
}

impl DepositBounds {
    pub const NONE: DepositBounds = DepositBounds {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };
    /// Width of the smoothing layer at each bound.
    pub const WIDTH: f64 = 0.01;

    /// `w softplus((b - hi)/w) - w softplus((lo - b)/w)`, scaled by `1/w`.
    pub fn penalty<T: Real>(&self, b: T) -> T {
        let w = Self::WIDTH;
        let sp = |x: T| {
            if !x.re().is_finite() || x.re() < -40.0 {
                T::cst(0.0)
            } else if x.re() > 0.0 {
                x + ((-x).exp() + 1.0).ln()
            } else {
                (x.exp() + 1.0).ln()
            }
        };
        let up = if self.hi.is_finite() { sp((b - self.hi) / w) } else { T::cst(0.0) };
        let dn = if self.lo.is_finite() { sp((-b + self.lo) / w) } else { T::cst(0.0) };
        up - dn
    }
}

/// Multipliers are measured in units of `(1 - lambda)/(1 + nu)`, the
/// ceiling above which labor has no interior optimum.
#[inline]
pub fn multiplier_scale(p: &ModelParams) -> f64 {
    (1.0 - p.lambda_weight) / (1.0 + p.nu)
}

#[derive(Debug, Clone, Copy)]
pub struct RamseyEval<T> {
    /// Worker consumption condition, investment Euler equation, multiplier
    /// martingale condition and implementability, in that order.
    pub res: [T; 4],
    pub c_w: T,
    pub c_e: T,
    pub l: T,
    pub y: T,
    pub w: T,
    pub r_k: T,
    pub i: T,
    pub q: T,
    pub profit: T,
    pub k_next: T,
    pub d_next: T,
    pub eta: T,
    /// Riskless rate supporting the plan, from the worker Euler equation.
    pub r: T,
    pub e_uw: T,
    pub e_ue: T,
    pub e_ret: T,
    pub e_payoff: T,
    pub tau_l: T,
    pub tau_d: T,
    pub tau_k: T,
    /// Period term of the saddle-point objective.
    pub flow: T,
    /// `E[(eta' - eta) u_wc'] / E[u_wc']`; material only near a deposit bound
    /// (positive at the upper bound, negative at the lower).
    pub bound_multiplier: T,
}

impl<T: Real> RamseyEval<T> {
    /// Lump-sum transfer closing the government budget.
    pub fn transfer(&self) -> T {
        self.tau_l * self.w * self.l + self.tau_d * self.d_next / self.r + self.tau_k * self.q * self.k_next
    }
}

#[allow(clippy::too_many_arguments)]
pub fn ramsey_eval<T: Real>(
    p: &ModelParams,
    chain: &ShockChain,
    k: f64,
    d: f64,
    mu: f64,
    s: usize,
    x: [T; 4],
    bounds: DepositBounds,
    next: &mut impl RamseyNext<T>,
) -> RamseyEval<T> {
    let [c_w, c_e, dn, eta] = x;
    let z = chain.z_values[s];
    let kt = T::cst(k);
    let l = planner_labor(p, z, kt, c_e, eta);
    let (y, r_k, w) = production_g(z, kt, l, p);
    let i = y - c_w - c_e;
    let inv = i / k;
    let (phi, dphi) = capital_production_g(inv, p);
    let (q, profit) = capital_price_and_profit_g(inv, p);
    let k_next = (phi + (1.0 - p.delta)) * k;
    let d_next = dn * k;

    let zero = T::cst(0.0);
    let (mut e_uw, mut e_ue, mut e_ret, mut e_payoff, mut e_gap) = (zero, zero, zero, zero, zero);
    for (s2, &prob) in chain.p[s].iter().enumerate() {
        if prob == 0.0 {
            continue;
        }
        let zeta = chain.zeta_values[s2];
        let k2 = k_next * zeta;
        let (cw2, ce2, eta2) = next.next(s2, k2, d_next, eta);
        let l2 = planner_labor(p, chain.z_values[s2], k2, ce2, eta2);
        let (y2, rk2, _) = production_g(chain.z_values[s2], k2, l2, p);
        let (q2, pi2) = capital_price_and_profit_g((y2 - cw2 - ce2) / k2, p);
        let uw = cw2.powf(-p.gamma);
        let ue = ce2.powf(-p.gamma);
        e_uw += uw * prob;
        e_ue += ue * prob;
        e_gap += (eta2 - eta) * uw * prob;
        let payoff = (rk2 + q2 * (1.0 - p.delta) + pi2) * (prob * zeta);
        e_ret += ue * payoff;
        e_payoff += payoff;
    }
    let (u_w, uw) = crra_g(c_w, p.gamma);
    let (u_e, ue) = crra_g(c_e, p.gamma);
    let lv = l.powf(1.0 + p.nu) * p.psi;
    let dt = T::cst(d);
    let muw = -(eta - mu) * dt * (c_w.recip() * p.gamma) - eta * (1.0 - p.gamma) + (1.0 - p.lambda_weight);
    let res0 = muw * uw / (ue * p.lambda_weight) - 1.0;
    let res1 = e_ret * dphi * p.beta / ue - 1.0;
    // Deposit condition: the scaled multiplier drift equals a smooth penalty
    // on `b = D'/K'` that is negligible inside `[lo, hi]` and steep outside.
    let g = e_gap / e_uw;
    let b = d_next / k_next;
    let pen = bounds.penalty(b);
    let res2 = pen - g / multiplier_scale(p);
    let bound_multiplier = g;
    let res3 = (dt - c_w + lv / uw - d_next * e_uw * p.beta / uw) / y;

    let r = uw / (e_uw * p.beta);
    let tau_l = -(l.powf(p.nu) * p.psi / (uw * w)) + 1.0;
    let tau_d = -(r * e_ue * p.beta / ue) + 1.0;
    let tau_k = e_ret * p.beta / (q * ue) - 1.0;
    let util_w = u_w - lv / (1.0 + p.nu);
    let flow = u_e * p.lambda_weight + util_w * (1.0 - p.lambda_weight) - dt * uw * mu + eta * (dt * uw - uw * c_w + lv);
    RamseyEval {
        res: [res0, res1, res2, res3],
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
        eta,
        r,
        e_uw,
        e_ue,
        e_ret,
        e_payoff,
        tau_l,
        tau_d,
        tau_k,
        flow,
        bound_multiplier,
    }
}

fn admissible(p: &ModelParams, x: &[f64; 4]) -> bool {
    x[0] > 0.0 && x[1] > 0.0 && x[3] * (1.0 + p.nu) < 1.0 - p.lambda_weight && x.iter().all(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy)]
pub struct RamseyPoint {
    pub x: [f64; 4],
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Newton solve of the four planner conditions at one state.
#[allow(clippy::too_many_arguments)]
pub fn solve_ramsey_point<C>(
    p: &ModelParams,
    chain: &ShockChain,
    k: f64,
    d: f64,
    mu: f64,
    s: usize,
    guess: [f64; 4],
    bounds: DepositBounds,
    next: &mut C,
    tol: f64,
    max_iter: usize,
) -> Result<RamseyPoint>
where
    C: RamseyNext<Dual<4>> + RamseyNext<f64>,
{
    let at = || format!("K={k}, D={d}, mu={mu}, shock={s}");
    let mut x = guess;
    if !admissible(p, &x) {
        return Err(Error::domain("planner point", format!("invalid guess {x:?} at {}", at())));
    }
    let eval = |x: [f64; 4], next: &mut C| ramsey_eval::<f64>(p, chain, k, d, mu, s, x, bounds, next).res;
    let norm = |r: &[f64; 4]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sq = |r: &[f64; 4]| r.iter().map(|v| v * v).sum::<f64>();
    let mut r = eval(x, next);
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::domain("planner point", format!("non-finite residual at guess, {}", at())));
    }
    for it in 0..max_iter {
        if norm(&r) < tol {
            return Ok(RamseyPoint { x, iterations: it, residual: norm(&r) });
        }
        let ev = ramsey_eval(p, chain, k, d, mu, s, Dual::<4>::vars(x), bounds, next);
        let jac = Matrix4::from_fn(|i, j| ev.res[i].d[j]);
        let rhs = Vector4::from_fn(|i, _| -ev.res[i].v);
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::convergence("planner point", format!("singular Jacobian at {}", at())))?;
        let base = sq(&r);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = [x[0] + t * step[0], x[1] + t * step[1], x[2] + t * step[2], x[3] + t * step[3]];
            if admissible(p, &trial) {
                let rt = eval(trial, next);
                if rt.iter().all(|v| v.is_finite()) && sq(&rt) <= (1.0 - 1e-4 * t) * base {
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
                return Ok(RamseyPoint { x, iterations: it, residual: norm(&r) });
            }
            return Err(Error::convergence(
                "planner point",
                format!("line search failed at {}, residuals {:.3?}, point {:.4?}", at(), r, x),
            ));
        }
    }
    if norm(&r) < tol {
        Ok(RamseyPoint { x, iterations: max_iter, residual: norm(&r) })
    } else {
        Err(Error::convergence(
            "planner point",
            format!("no convergence at {}, residual {:.3e}", at(), norm(&r)),
        ))
    }
}
