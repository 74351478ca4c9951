//! Preferences and technology.
//!
//! The public functions validate their inputs and return `Result`; the
//! `*_g` variants are generic over [`Real`] and skip the checks so that the
//! residual code can differentiate through them.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::real::Real;

/// CRRA utility and marginal utility. `gamma == 1` is log utility.
#[inline]
pub fn crra_g<T: Real>(c: T, gamma: f64) -> (T, T) {
    let uc = c.powf(-gamma);
    let u = if gamma == 1.0 {
        c.ln()
    } else {
        c * uc / (1.0 - gamma)
    };
    (u, uc)
}

/// Disutility of labor `psi l^(1+nu)/(1+nu)` and its slope.
#[inline]
pub fn labor_disutility_g<T: Real>(l: T, p: &ModelParams) -> (T, T) {
    let slope = l.powf(p.nu) * p.psi;
    (slope * l / (1.0 + p.nu), slope)
}

fn positive(what: &'static str, name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(what, format!("{name} = {v} must be positive")))
    }
}

/// Worker utility: returns `(u, u_c, u_l)`.
pub fn utility_worker(c: f64, l: f64, p: &ModelParams) -> Result<(f64, f64, f64)> {
    positive("utility_worker", "c", c)?;
    if !(l >= 0.0 && l.is_finite()) {
        return Err(Error::domain("utility_worker", format!("l = {l} must be nonnegative")));
    }
    let (u, uc) = crra_g(c, p.gamma);
    let (v, vl) = labor_disutility_g(l, p);
    Ok((u - v, uc, -vl))
}

/// Expert utility: returns `(u, u_c)`.
pub fn utility_expert(c: f64, p: &ModelParams) -> Result<(f64, f64)> {
    positive("utility_expert", "c", c)?;
    Ok(crra_g(c, p.gamma))
}

/// Capital production `Phi(x)` and `Phi'(x)` for an investment ratio `x`.
#[inline]
pub fn capital_production_g<T: Real>(x: T, p: &ModelParams) -> (T, T) {
    let base = (x - p.delta) * p.a_cap + 1.0;
    if p.xi == 1.0 {
        return (x, T::cst(1.0));
    }
    let slope = base.powf(p.xi - 1.0);
    let phi = (slope * base - 1.0) / (p.a_cap * p.xi) + p.delta;
    (phi, slope)
}

/// Lower bound of the investment ratio for which `Phi` is defined.
pub fn min_investment_ratio(p: &ModelParams) -> f64 {
    p.delta - 1.0 / p.a_cap
}

pub fn capital_production(x: f64, p: &ModelParams) -> Result<(f64, f64)> {
    if !(x.is_finite() && p.a_cap * (x - p.delta) + 1.0 > 0.0) {
        return Err(Error::domain(
            "capital_production",
            format!("x = {x} outside domain x > {}", min_investment_ratio(p)),
        ));
    }
    Ok(capital_production_g(x, p))
}

/// Output and factor prices `(Y, R, W)`.
#[inline]
pub fn production_g<T: Real>(z: f64, k: T, l: T, p: &ModelParams) -> (T, T, T) {
    let y = k.powf(p.alpha) * l.powf(1.0 - p.alpha) * z.exp();
    (y, y * p.alpha / k, y * (1.0 - p.alpha) / l)
}

pub fn production(z: f64, k: f64, l: f64, p: &ModelParams) -> Result<(f64, f64, f64)> {
    positive("production", "K", k)?;
    positive("production", "L", l)?;
    if !z.is_finite() {
        return Err(Error::domain("production", format!("Z = {z} not finite")));
    }
    Ok(production_g(z, k, l, p))
}

/// Price of capital `q = 1/Phi'(x)` and per-unit profit `Pi = q Phi(x) - x`.
#[inline]
pub fn capital_price_and_profit_g<T: Real>(x: T, p: &ModelParams) -> (T, T) {
    let (phi, dphi) = capital_production_g(x, p);
    let q = dphi.recip();
    (q, q * phi - x)
}

pub fn capital_price_and_profit(x: f64, p: &ModelParams) -> Result<(f64, f64)> {
    capital_production(x, p)?;
    Ok(capital_price_and_profit_g(x, p))
}

/// Inverse of `q = 1/Phi'(x)`: the investment ratio that supports price `q`.
pub fn investment_ratio_for_price(q: f64, p: &ModelParams) -> f64 {
    if p.xi == 1.0 {
        return p.delta;
    }
    // Phi'(x) = base^(xi-1) = 1/q
    let base = q.powf(1.0 / (1.0 - p.xi));
    p.delta + (base - 1.0) / p.a_cap
}

/// Pareto weight and rescaled labor disutility that make a planner with
/// unit measures equivalent to a utilitarian planner over a population with
/// expert share `theta`.
pub fn measures_to_weights(theta: f64, p: &ModelParams) -> Result<(f64, f64)> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::domain("measures_to_weights", format!("theta = {theta} outside (0,1)")));
    }
    let a = theta.powf(p.gamma);
    let b = (1.0 - theta).powf(p.gamma);
    Ok((a / (a + b), p.psi * (1.0 - theta).powf(p.nu + p.gamma)))
}

/// Expert population share implied by a Pareto weight.
pub fn weight_to_measure(lambda: f64, gamma: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::domain("weight_to_measure", format!("lambda = {lambda} outside (0,1)")));
    }
    let odds = (lambda / (1.0 - lambda)).powf(1.0 / gamma);
    Ok(odds / (1.0 + odds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn worker_utility_examples() {
        let (u, uc, ul) = utility_worker(1.0, 0.0, &p()).unwrap();
        assert_eq!((u, uc, ul), (-1.0, 1.0, 0.0));
        let (u, uc, ul) = utility_worker(1.0, 1.0, &p()).unwrap();
        assert_eq!((u, uc, ul), (-1.5, 1.0, -1.0));
        assert!(utility_worker(0.0, 1.0, &p()).is_err());
        assert!(utility_worker(-1.0, 1.0, &p()).is_err());
        assert!(utility_worker(1.0, -0.1, &p()).is_err());
    }

    #[test]
    fn expert_utility_examples() {
        assert_eq!(utility_expert(1.0, &p()).unwrap(), (-1.0, 1.0));
        assert_eq!(utility_expert(4.0, &p()).unwrap(), (-0.25, 0.0625));
        assert_eq!(utility_expert(0.5, &p()).unwrap().1, 4.0);
        assert!(utility_expert(0.0, &p()).is_err());
    }

    #[test]
    fn log_utility_limit() {
        let mut q = p();
        q.gamma = 1.0;
        let (u, uc) = utility_expert(2.0, &q).unwrap();
        assert_relative_eq!(u, 2f64.ln());
        assert_relative_eq!(uc, 0.5);
    }

    #[test]
    fn capital_production_at_delta() {
        let (phi, dphi) = capital_production(0.025, &p()).unwrap();
        assert!((phi - 0.025).abs() < 1e-12);
        assert!((dphi - 1.0).abs() < 1e-12);
        let (q, pi) = capital_price_and_profit(0.025, &p()).unwrap();
        assert!((q - 1.0).abs() < 1e-12 && pi.abs() < 1e-12);
    }

    #[test]
    fn linear_capital_technology() {
        let mut q = p();
        q.xi = 1.0;
        for x in [-0.5, 0.0, 0.03, 0.4] {
            assert_eq!(capital_production(x, &q).unwrap(), (x, 1.0));
            assert_eq!(capital_price_and_profit(x, &q).unwrap(), (1.0, 0.0));
        }
    }

    #[test]
    fn capital_production_domain() {
        let err = capital_production(-0.9, &p()).unwrap_err();
        assert!(err.to_string().contains("-0.9"), "{err}");
    }

    #[test]
    fn production_unit_inputs() {
        let (y, r, w) = production(0.0, 1.0, 1.0, &p()).unwrap();
        assert_eq!((y, r, w), (1.0, 0.36, 0.64));
        assert!(production(0.0, 0.0, 1.0, &p()).is_err());
        assert!(production(0.0, 1.0, 0.0, &p()).is_err());
    }

    #[test]
    fn price_inversion() {
        for x in [0.0, 0.02, 0.025, 0.05, 0.1] {
            let (q, _) = capital_price_and_profit(x, &p()).unwrap();
            assert_relative_eq!(investment_ratio_for_price(q, &p()), x, epsilon = 1e-12);
        }
    }

    #[test]
    fn weights_examples() {
        let (l, psi_hat) = measures_to_weights(0.5, &p()).unwrap();
        assert_relative_eq!(l, 0.5);
        assert_relative_eq!(psi_hat, 0.125);
        let theta = weight_to_measure(0.01, 2.0).unwrap();
        assert!((theta - 0.0913).abs() < 5e-4, "{theta}");
        assert_relative_eq!(measures_to_weights(theta, &p()).unwrap().0, 0.01, epsilon = 1e-14);
        assert!(measures_to_weights(1.0, &p()).is_err());
    }
}
