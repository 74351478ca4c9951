use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::keyvalue::{fmt_f64, KeyValues};

/// Structural parameters of the economy plus the settings of the
/// productivity discretization. One period is a quarter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Discount factor.
    pub beta: f64,
    /// Relative risk aversion of both agents.
    pub gamma: f64,
    /// Inverse Frisch elasticity of the worker's labor supply.
    pub nu: f64,
    /// Labor disutility scale.
    pub psi: f64,
    /// Curvature of capital production, in (0, 1].
    pub xi: f64,
    /// Scale of capital production.
    pub a_cap: f64,
    /// Capital share.
    pub alpha: f64,
    pub delta: f64,
    /// Persistence of log productivity in normal times.
    pub rho_z: f64,
    pub sigma_eps: f64,
    /// Log productivity while the disaster lasts.
    pub z_disaster: f64,
    /// Capital quality during a disaster.
    pub zeta_low: f64,
    /// Per-quarter probability of entering the disaster regime.
    pub pi_enter: f64,
    /// Per-quarter probability of leaving the disaster regime.
    pub pi_exit: f64,
    /// Planner's Pareto weight on experts.
    pub lambda_weight: f64,
    /// Number of normal-times productivity nodes.
    pub n_z: usize,
    /// Half-width of the productivity grid in unconditional standard
    /// deviations; `None` picks the width that matches the stationary
    /// standard deviation of the AR(1).
    pub z_span: Option<f64>,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            beta: 0.97,
            gamma: 2.0,
            nu: 1.0,
            psi: 1.0,
            xi: 0.80,
            a_cap: 1.25,
            alpha: 0.36,
            delta: 0.025,
            rho_z: 0.90,
            sigma_eps: 0.08,
            z_disaster: -0.15,
            zeta_low: 0.95,
            pi_enter: 0.005,
            pi_exit: 0.34,
            lambda_weight: 0.01,
            n_z: 7,
            z_span: None,
        }
    }
}

fn check(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(format!("invalid parameters: {msg}")))
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.beta,
            self.gamma,
            self.nu,
            self.psi,
            self.xi,
            self.a_cap,
            self.alpha,
            self.delta,
            self.rho_z,
            self.sigma_eps,
            self.z_disaster,
            self.zeta_low,
            self.pi_enter,
            self.pi_exit,
            self.lambda_weight,
        ];
        check(finite.iter().all(|v| v.is_finite()), "all parameters must be finite")?;
        check(self.beta > 0.0 && self.beta < 1.0, "beta must lie in (0,1)")?;
        check(self.gamma > 0.0, "gamma must be positive")?;
        check(self.nu > 0.0, "nu must be positive")?;
        check(self.psi > 0.0, "psi must be positive")?;
        check(self.xi > 0.0 && self.xi <= 1.0, "xi must lie in (0,1]")?;
        check(self.a_cap > 0.0, "A_cap must be positive")?;
        check(self.alpha > 0.0 && self.alpha < 1.0, "alpha must lie in (0,1)")?;
        check(self.delta > 0.0 && self.delta < 1.0, "delta must lie in (0,1)")?;
        check(self.rho_z.abs() < 1.0, "|rho_Z| must be below 1")?;
        check(self.sigma_eps >= 0.0, "sigma_eps must be nonnegative")?;
        check(self.zeta_low > 0.0 && self.zeta_low <= 1.0, "zeta_low must lie in (0,1]")?;
        check((0.0..=1.0).contains(&self.pi_enter), "pi_enter must lie in [0,1]")?;
        check((0.0..=1.0).contains(&self.pi_exit), "pi_exit must lie in [0,1]")?;
        check(
            self.lambda_weight > 0.0 && self.lambda_weight < 1.0,
            "lambda_weight must lie in (0,1)",
        )?;
        check(self.n_z >= 2, "n_z must be at least 2")?;
        if let Some(span) = self.z_span {
            check(span > 0.0 && span.is_finite(), "z_span must be positive")?;
        }
        Ok(())
    }

    /// Reads parameters from key-value pairs, consuming the keys it knows.
    /// Missing keys keep their defaults.
    pub fn take_from(kv: &mut KeyValues) -> Result<Self> {
        let mut p = ModelParams::default();
        macro_rules! field {
            ($name:ident, $key:literal) => {
                if let Some(v) = kv.take($key)? {
                    p.$name = v;
                }
            };
        }
        field!(beta, "beta");
        field!(gamma, "gamma");
        field!(nu, "nu");
        field!(psi, "psi");
        field!(xi, "xi");
        field!(a_cap, "A_cap");
        field!(alpha, "alpha");
        field!(delta, "delta");
        field!(rho_z, "rho_Z");
        field!(sigma_eps, "sigma_eps");
        field!(z_disaster, "Z_disaster");
        field!(zeta_low, "zeta_low");
        field!(pi_enter, "pi_enter");
        field!(pi_exit, "pi_exit");
        field!(lambda_weight, "lambda_weight");
        field!(n_z, "n_z");
        if let Some(raw) = kv.take::<String>("z_span")? {
            p.z_span = if raw == "auto" {
                None
            } else {
                Some(raw.parse().map_err(|_| {
                    Error::Config(format!("cannot parse z_span `{raw}` (number or `auto`)"))
                })?)
            };
        }
        p.validate()?;
        Ok(p)
    }

    /// Parses a parameter file body; unknown keys are an error.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let p = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(p)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("beta", fmt_f64(self.beta));
        kv.set("gamma", fmt_f64(self.gamma));
        kv.set("nu", fmt_f64(self.nu));
        kv.set("psi", fmt_f64(self.psi));
        kv.set("xi", fmt_f64(self.xi));
        kv.set("A_cap", fmt_f64(self.a_cap));
        kv.set("alpha", fmt_f64(self.alpha));
        kv.set("delta", fmt_f64(self.delta));
        kv.set("rho_Z", fmt_f64(self.rho_z));
        kv.set("sigma_eps", fmt_f64(self.sigma_eps));
        kv.set("Z_disaster", fmt_f64(self.z_disaster));
        kv.set("zeta_low", fmt_f64(self.zeta_low));
        kv.set("pi_enter", fmt_f64(self.pi_enter));
        kv.set("pi_exit", fmt_f64(self.pi_exit));
        kv.set("lambda_weight", fmt_f64(self.lambda_weight));
        kv.set("n_z", self.n_z);
        kv.set(
            "z_span",
            self.z_span.map_or_else(|| "auto".to_string(), fmt_f64),
        );
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_key_values().to_text()
    }

    /// Short stable fingerprint of the parameter set, recorded in checkpoints.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Gross quarterly riskless rate of the deterministic economy.
    pub fn steady_state_rate(&self) -> f64 {
        1.0 / self.beta
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_table_values() {
        let p = ModelParams::default();
        assert_eq!(p.beta, 0.97);
        assert_eq!(p.gamma, 2.0);
        assert_eq!(p.nu, 1.0);
        assert_eq!(p.psi, 1.0);
        assert_eq!(p.xi, 0.80);
        assert_eq!(p.a_cap, 1.25);
        assert_eq!(p.alpha, 0.36);
        assert_eq!(p.delta, 0.025);
        assert_eq!(p.rho_z, 0.90);
        assert_eq!(p.sigma_eps, 0.08);
        assert_eq!(p.z_disaster, -0.15);
        assert_eq!(p.zeta_low, 0.95);
        assert_eq!(p.pi_enter, 0.005);
        assert_eq!(p.pi_exit, 0.34);
        assert_eq!(p.lambda_weight, 0.01);
        p.validate().unwrap();
    }

    #[test]
    fn text_round_trip_and_missing_keys() {
        let mut p = ModelParams::default();
        p.gamma = 1.5;
        p.z_span = Some(2.5);
        let q = ModelParams::from_text(&p.to_text()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.hash(), q.hash());

        let partial = ModelParams::from_text("gamma = 3\n").unwrap();
        assert_eq!(partial.gamma, 3.0);
        assert_eq!(partial.beta, 0.97);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(ModelParams::from_text("gama = 2\n").is_err());
        assert!(ModelParams::from_text("beta = 1.2\n").is_err());
        assert!(ModelParams::from_text("xi = 0\n").is_err());
        assert!(ModelParams::from_text("rho_Z = 1\n").is_err());
    }

    #[test]
    fn hash_changes_with_parameters() {
        let a = ModelParams::default();
        let mut b = a.clone();
        b.pi_enter = 0.0;
        assert_ne!(a.hash(), b.hash());
    }
}
