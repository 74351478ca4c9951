use std::fmt::Debug;

use crate::keyvalue::{fmt_f64, KeyValues};

/// Tax rates as functions of the aggregate state `(K, D, shock)`.
///
/// The deposit and capital taxes may also depend on the current price of
/// capital `q`, which is endogenous; they return the rate and its slope in
/// `q` so that Newton iterations see the full dependence.
pub trait TaxSchedule: Debug + Send + Sync {
    fn labor(&self, _k: f64, _d: f64, _shock: usize) -> f64 {
        0.0
    }

    fn deposit(&self, _k: f64, _d: f64, _shock: usize, _q: f64) -> (f64, f64) {
        (0.0, 0.0)
    }

    fn capital(&self, _k: f64, _d: f64, _shock: usize, _q: f64) -> (f64, f64) {
        (0.0, 0.0)
    }

    /// Key-value description recorded in manifests and checkpoints.
    fn describe(&self) -> KeyValues;
}

/// The laissez-faire schedule.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NoTaxes;

impl TaxSchedule for NoTaxes {
    fn describe(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("kind", "none");
        kv
    }
}

/// Deposit tax `tau_d = tau_d1 * D * (D/(qK) - tau_d2)`; the other two
/// instruments are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimpleRule {
    pub tau_d1: f64,
    pub tau_d2: f64,
}

impl SimpleRule {
    pub fn new(tau_d1: f64, tau_d2: f64) -> Self {
        SimpleRule { tau_d1, tau_d2 }
    }

    pub fn rate(&self, k: f64, d: f64, q: f64) -> f64 {
        self.tau_d1 * d * (d / (q * k) - self.tau_d2)
    }
}

impl TaxSchedule for SimpleRule {
    fn deposit(&self, k: f64, d: f64, _shock: usize, q: f64) -> (f64, f64) {
        let lev = d / (q * k);
        (self.tau_d1 * d * (lev - self.tau_d2), -self.tau_d1 * d * lev / q)
    }

    fn describe(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("kind", "simple-rule");
        kv.set("tau_d1", fmt_f64(self.tau_d1));
        kv.set("tau_d2", fmt_f64(self.tau_d2));
        kv
    }
}

/// Arbitrary state-dependent rates supplied as closures (no dependence on
/// `q`). Used to feed backed-out Ramsey taxes into the equilibrium system.
pub struct StateTaxes<F>
where
    F: Fn(f64, f64, usize) -> [f64; 3] + Send + Sync,
{
    pub rates: F,
    pub label: String,
}

impl<F> Debug for StateTaxes<F>
where
    F: Fn(f64, f64, usize) -> [f64; 3] + Send + Sync,
{
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "StateTaxes({})", self.label)
    }
}

impl<F> TaxSchedule for StateTaxes<F>
where
    F: Fn(f64, f64, usize) -> [f64; 3] + Send + Sync,
{
    fn labor(&self, k: f64, d: f64, shock: usize) -> f64 {
        (self.rates)(k, d, shock)[0]
    }

    fn deposit(&self, k: f64, d: f64, shock: usize, _q: f64) -> (f64, f64) {
        ((self.rates)(k, d, shock)[1], 0.0)
    }

    fn capital(&self, k: f64, d: f64, shock: usize, _q: f64) -> (f64, f64) {
        ((self.rates)(k, d, shock)[2], 0.0)
    }

    fn describe(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("kind", "state");
        kv.set("label", &self.label);
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_examples() {
        let r = SimpleRule::new(0.1, 0.4);
        assert_eq!(r.rate(2.0, 0.0, 1.0), 0.0);
        assert!((r.rate(2.0, 1.0, 1.0) - 0.01).abs() < 1e-15);
        assert_eq!(SimpleRule::new(0.3, 0.5).rate(2.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn rule_slope_in_q() {
        let r = SimpleRule::new(0.2, 0.3);
        let (k, d, q) = (10.0, 6.0, 1.1);
        let h = 1e-6;
        let fd = (r.rate(k, d, q + h) - r.rate(k, d, q - h)) / (2.0 * h);
        let (v, dv) = r.deposit(k, d, 0, q);
        assert_eq!(v, r.rate(k, d, q));
        assert!((dv - fd).abs() < 1e-8);
    }
}
