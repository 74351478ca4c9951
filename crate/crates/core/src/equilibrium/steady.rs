use crate::model::ModelParams;

/// Deterministic steady state at `Z = 0` with deposits `D = leverage * K`
/// (the wealth distribution is indeterminate without risk, so it is an
/// input).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub k: f64,
    pub d: f64,
    pub l: f64,
    pub y: f64,
    pub c_w: f64,
    pub c_e: f64,
    pub i: f64,
    pub r: f64,
}

pub fn deterministic_steady_state(p: &ModelParams, leverage: f64) -> SteadyState {
    let rental = 1.0 / p.beta - 1.0 + p.delta;
    let kl = (p.alpha / rental).powf(1.0 / (1.0 - p.alpha));
    let w = (1.0 - p.alpha) * kl.powf(p.alpha);
    // C_w = W L + (1 - beta) D with D = leverage * kl * L
    let a = w + (1.0 - p.beta) * leverage * kl;
    let l = (w / (p.psi * a.powf(p.gamma))).powf(1.0 / (p.nu + p.gamma));
    let k = kl * l;
    let y = k.powf(p.alpha) * l.powf(1.0 - p.alpha);
    let c_w = a * l;
    let i = p.delta * k;
    SteadyState {
        k,
        d: leverage * k,
        l,
        y,
        c_w,
        c_e: y - i - c_w,
        i,
        r: 1.0 / p.beta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_magnitudes() {
        let ss = deterministic_steady_state(&ModelParams::default(), 0.65);
        assert!((ss.k / ss.y - 6.437).abs() < 1e-3);
        assert!((ss.l - 0.726).abs() < 1e-3, "{ss:?}");
        assert!(ss.c_e > 0.0 && ss.c_w > 0.0);
        assert!((ss.y - ss.i - ss.c_w - ss.c_e).abs() < 1e-14);
    }
}
