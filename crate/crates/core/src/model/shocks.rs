//! Exogenous shock process: a discretized AR(1) for log productivity in
//! normal times, joined with a two-regime capital-quality process.

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::ModelParams;

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Stationary distribution of a row-stochastic matrix given as rows.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = p.len();
    // (P' - I) pi = 0 with the last equation replaced by sum(pi) = 1.
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(j, i)] = p[i][j];
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let mut pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Config("transition matrix has no unique stationary distribution".into()))?;
    // A few power steps polish the solve to the fixed point of P itself.
    for _ in 0..3 {
        let mut next = DVector::<f64>::zeros(n);
        for i in 0..n {
            for j in 0..n {
                next[j] += pi[i] * p[i][j];
            }
        }
        pi = next;
    }
    let s: f64 = pi.iter().map(|v| v.max(0.0)).sum();
    Ok(pi.iter().map(|v| v.max(0.0) / s).collect())
}

/// Moments of a scalar finite Markov chain: `(mean, std, autocorrelation)`
/// under its stationary distribution.
pub fn chain_moments(values: &[f64], p: &[Vec<f64>], pi: &[f64]) -> (f64, f64, f64) {
    let mean: f64 = pi.iter().zip(values).map(|(w, v)| w * v).sum();
    let var: f64 = pi.iter().zip(values).map(|(w, v)| w * (v - mean).powi(2)).sum();
    let mut cov = 0.0;
    for i in 0..values.len() {
        let cond: f64 = p[i].iter().zip(values).map(|(w, v)| w * (v - mean)).sum();
        cov += pi[i] * (values[i] - mean) * cond;
    }
    let ac = if var > 0.0 { cov / var } else { 0.0 };
    (mean, var.sqrt(), ac)
}

fn tauchen(rho: f64, sigma: f64, n: usize, span: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let sz = sigma / (1.0 - rho * rho).sqrt();
    if sz == 0.0 {
        let mid = n / 2;
        let rows = (0..n)
            .map(|_| (0..n).map(|j| if j == mid { 1.0 } else { 0.0 }).collect())
            .collect();
        return (vec![0.0; n], rows);
    }
    let top = span * sz;
    let h = 2.0 * top / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| -top + h * i as f64).collect();
    let rows = grid
        .iter()
        .map(|&zi| {
            (0..n)
                .map(|j| {
                    let m = rho * zi;
                    let hi = if j + 1 == n { 1.0 } else { normal_cdf((grid[j] + h / 2.0 - m) / sigma) };
                    let lo = if j == 0 { 0.0 } else { normal_cdf((grid[j] - h / 2.0 - m) / sigma) };
                    (hi - lo).max(0.0)
                })
                .collect::<Vec<f64>>()
        })
        .map(|row: Vec<f64>| {
            let s: f64 = row.iter().sum();
            row.into_iter().map(|v| v / s).collect()
        })
        .collect();
    (grid, rows)
}

fn std_ratio(rho: f64, sigma: f64, n: usize, span: f64) -> Result<f64> {
    let (grid, rows) = tauchen(rho, sigma, n, span);
    let pi = stationary_distribution(&rows)?;
    let (_, sd, _) = chain_moments(&grid, &rows, &pi);
    Ok(sd / (sigma / (1.0 - rho * rho).sqrt()))
}

/// Equal-spaced grid with Gaussian bucket probabilities. With `span = None`
/// the half-width (in unconditional standard deviations) is chosen so that
/// the chain's stationary standard deviation equals the AR(1) one.
pub fn discretize_productivity(
    rho: f64,
    sigma: f64,
    n_z: usize,
    span: Option<f64>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if n_z < 2 {
        return Err(Error::Config(format!("n_z = {n_z} must be at least 2")));
    }
    if !(rho.abs() < 1.0) || !(sigma >= 0.0) {
        return Err(Error::Config(format!("invalid AR(1) rho = {rho}, sigma = {sigma}")));
    }
    let span = match span {
        Some(m) => m,
        None if sigma == 0.0 => 3.0,
        None => matched_span(rho, sigma, n_z)?,
    };
    Ok(tauchen(rho, sigma, n_z, span))
}

fn matched_span(rho: f64, sigma: f64, n: usize) -> Result<f64> {
    let (mut lo, mut hi) = (0.5, 6.0);
    let f_lo = std_ratio(rho, sigma, n, lo)? - 1.0;
    let f_hi = std_ratio(rho, sigma, n, hi)? - 1.0;
    if f_lo * f_hi > 0.0 {
        return Ok(3.0);
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if (std_ratio(rho, sigma, n, mid)? - 1.0) * f_lo > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Joint Markov chain over (Z, zeta). States `0..n_normal` are normal times
/// with `zeta = 1`; the last state is the disaster.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockChain {
    pub z_values: Vec<f64>,
    pub zeta_values: Vec<f64>,
    /// Row-stochastic transition matrix, `p[i][j] = Prob(j | i)`.
    pub p: Vec<Vec<f64>>,
    pub stationary: Vec<f64>,
    pub n_normal: usize,
}

impl ShockChain {
    pub fn len(&self) -> usize {
        self.z_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_values.is_empty()
    }

    pub fn disaster_index(&self) -> usize {
        self.n_normal
    }

    pub fn is_disaster(&self, i: usize) -> bool {
        i >= self.n_normal
    }

    /// The normal state with median productivity.
    pub fn median_normal(&self) -> usize {
        self.n_normal / 2
    }

    pub fn disaster_mass(&self) -> f64 {
        self.stationary[self.n_normal..].iter().sum()
    }

    /// Next state for a uniform draw `u` in [0, 1).
    pub fn next_state(&self, i: usize, u: f64) -> usize {
        let mut acc = 0.0;
        let row = &self.p[i];
        for (j, w) in row.iter().enumerate() {
            acc += w;
            if u < acc {
                return j;
            }
        }
        // Rounding: fall back to the last state with positive mass.
        row.iter().rposition(|w| *w > 0.0).unwrap_or(row.len() - 1)
    }
}

pub fn build_shock_chain(z_grid: &[f64], p_z: &[Vec<f64>], p: &ModelParams) -> Result<ShockChain> {
    let n = z_grid.len();
    if n < 2 || p_z.len() != n || p_z.iter().any(|r| r.len() != n) {
        return Err(Error::Config("productivity chain has inconsistent dimensions".into()));
    }
    for row in p_z {
        let s: f64 = row.iter().sum();
        if row.iter().any(|v| *v < 0.0) || (s - 1.0).abs() > 1e-12 {
            return Err(Error::Config("productivity transition rows must be stochastic".into()));
        }
    }
    let pi_z = stationary_distribution(p_z)?;
    let mut rows = Vec::with_capacity(n + 1);
    for row in p_z {
        let mut r: Vec<f64> = row.iter().map(|v| v * (1.0 - p.pi_enter)).collect();
        r.push(p.pi_enter);
        rows.push(r);
    }
    let mut last: Vec<f64> = pi_z.iter().map(|v| v * p.pi_exit).collect();
    last.push(1.0 - p.pi_exit);
    rows.push(last);

    // The disaster mass has a closed form; the normal states share the rest
    // in proportion to the productivity chain's stationary distribution
    // (entry is state-independent and exit draws from pi_z).
    let mass = if p.pi_enter + p.pi_exit > 0.0 {
        p.pi_enter / (p.pi_enter + p.pi_exit)
    } else {
        0.0
    };
    let stationary = if p.pi_exit == 0.0 && p.pi_enter > 0.0 {
        let mut s = vec![0.0; n];
        s.push(1.0);
        s
    } else {
        let mut s: Vec<f64> = pi_z.iter().map(|v| v * (1.0 - mass)).collect();
        s.push(mass);
        s
    };

    let mut z_values = z_grid.to_vec();
    z_values.push(p.z_disaster);
    let mut zeta_values = vec![1.0; n];
    zeta_values.push(p.zeta_low);
    Ok(ShockChain {
        z_values,
        zeta_values,
        p: rows,
        stationary,
        n_normal: n,
    })
}

impl ModelParams {
    pub fn shock_chain(&self) -> Result<ShockChain> {
        let (grid, pz) = discretize_productivity(self.rho_z, self.sigma_eps, self.n_z, self.z_span)?;
        build_shock_chain(&grid, &pz, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iid_chain_has_identical_rows() {
        let (_, p) = discretize_productivity(0.0, 0.08, 5, None).unwrap();
        for row in &p[1..] {
            for (a, b) in row.iter().zip(&p[0]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_innovation_absorbs_at_middle() {
        let (grid, p) = discretize_productivity(0.9, 0.0, 5, None).unwrap();
        assert!(grid.iter().all(|z| *z == 0.0));
        assert!(p.iter().all(|r| r[2] == 1.0));
    }

    #[test]
    fn matched_moments_for_table_values() {
        for n in [7, 9, 15] {
            let (grid, p) = discretize_productivity(0.9, 0.08, n, None).unwrap();
            let pi = stationary_distribution(&p).unwrap();
            let (mean, sd, ac) = chain_moments(&grid, &p, &pi);
            let target = 0.08 / (1.0f64 - 0.81).sqrt();
            assert!(mean.abs() < 1e-12);
            assert!((sd / target - 1.0).abs() < 0.05, "n={n} sd={sd}");
            assert!((ac - 0.9).abs() < 0.02, "n={n} ac={ac}");
        }
    }

    #[test]
    fn fixed_span_is_honored() {
        let (grid, _) = discretize_productivity(0.5, 0.1, 5, Some(2.0)).unwrap();
        let sz = 0.1 / (1.0f64 - 0.25).sqrt();
        assert!((grid[4] - 2.0 * sz).abs() < 1e-14);
        assert!(discretize_productivity(0.5, 0.1, 1, None).is_err());
    }

    #[test]
    fn joint_chain_table_values() {
        let p = ModelParams::default();
        let chain = p.shock_chain().unwrap();
        assert_eq!(chain.len(), 8);
        for row in &chain.p {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
        assert!((chain.disaster_mass() - 0.005 / 0.345).abs() < 1e-10);
        let n = chain.len();
        for j in 0..n {
            let v: f64 = (0..n).map(|i| chain.stationary[i] * chain.p[i][j]).sum();
            assert!((v - chain.stationary[j]).abs() < 1e-10);
        }
        assert_eq!(chain.zeta_values[7], 0.95);
        assert_eq!(chain.z_values[7], -0.15);
        assert!(chain.zeta_values[..7].iter().all(|z| *z == 1.0));
    }

    #[test]
    fn unreachable_disaster() {
        let p = ModelParams {
            pi_enter: 0.0,
            ..ModelParams::default()
        };
        let chain = p.shock_chain().unwrap();
        assert_eq!(chain.disaster_mass(), 0.0);
        assert!(chain.p[..7].iter().all(|r| r[7] == 0.0));
    }

    #[test]
    fn sampling_follows_rows() {
        let chain = ModelParams::default().shock_chain().unwrap();
        assert_eq!(chain.next_state(7, 0.999), 7);
        assert_eq!(chain.next_state(3, 0.9999), 7);
        assert_eq!(chain.next_state(3, 0.0), 0);
    }
}
