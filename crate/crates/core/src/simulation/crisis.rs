use std::io::Write;

use crate::error::{Error, Result};
use crate::keyvalue::fmt_f64;
use crate::simulation::path::{draw_shocks, simulate_shocks, Regime, SimConfig, SimPath, Var};

/// Periods before and after a crisis onset in event windows.
pub const WINDOW_PRE: usize = 40;
pub const WINDOW_POST: usize = 20;

/// Crisis onsets of a path and the episode-averaged event window.
#[derive(Debug, Clone, PartialEq)]
pub struct CrisisEpisodeSet {
    /// Dates at which investment first falls below `threshold`.
    pub onsets: Vec<usize>,
    /// Onsets whose full window lies inside the path.
    pub windowed: Vec<usize>,
    pub threshold: f64,
    pub investment_mean: f64,
    pub investment_std: f64,
    /// Averaged window, row `j` is offset `j - WINDOW_PRE`, columns follow
    /// [`Var::ALL`].
    pub window: Vec<[f64; Var::COUNT]>,
    pub periods: usize,
}

impl CrisisEpisodeSet {
    pub fn count(&self) -> usize {
        self.onsets.len()
    }

    pub fn probability(&self) -> f64 {
        self.onsets.len() as f64 / self.periods as f64
    }

    pub fn at(&self, offset: isize, v: Var) -> f64 {
        self.window[(offset + WINDOW_PRE as isize) as usize][v as usize]
    }
}

/// Averages all variables of `path` over windows around `onsets`; onsets
/// whose window is truncated by the path ends are skipped.
pub fn event_window(path: &SimPath, onsets: &[usize]) -> (Vec<usize>, Vec<[f64; Var::COUNT]>) {
    let used: Vec<usize> = onsets
        .iter()
        .copied()
        .filter(|&t| t >= WINDOW_PRE && t + WINDOW_POST < path.len())
        .collect();
    let mut win = vec![[0.0; Var::COUNT]; WINDOW_PRE + WINDOW_POST + 1];
    if used.is_empty() {
        return (used, win);
    }
    for (j, row) in win.iter_mut().enumerate() {
        for v in Var::ALL {
            let c = path.col(v);
            row[v as usize] = used.iter().map(|&t| c[t + j - WINDOW_PRE]).sum::<f64>() / used.len() as f64;
        }
    }
    (used, win)
}

/// Crisis dates: investment more than two ergodic standard deviations below
/// its ergodic mean at `t` but not at `t - 1`.
pub fn identify_crises(path: &SimPath) -> CrisisEpisodeSet {
    let inv = path.col(Var::I);
    let n = inv.len();
    let mean = inv.iter().sum::<f64>() / n as f64;
    let std = (inv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0).max(1.0)).sqrt();
    let threshold = mean - 2.0 * std;
    let onsets: Vec<usize> = (1..n)
        .filter(|&t| std > 0.0 && inv[t] < threshold && inv[t - 1] >= threshold)
        .collect();
    let (windowed, window) = event_window(path, &onsets);
    CrisisEpisodeSet {
        onsets,
        windowed,
        threshold,
        investment_mean: mean,
        investment_std: std,
        window,
        periods: n,
    }
}

/// Two regimes simulated on one shock sequence; crisis dates are identified
/// on regime `a` and applied to both.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedComparison {
    pub crises: CrisisEpisodeSet,
    pub window_a: Vec<[f64; Var::COUNT]>,
    pub window_b: Vec<[f64; Var::COUNT]>,
    pub label_a: String,
    pub label_b: String,
}

impl MatchedComparison {
    /// Writes `offset`, then for each variable its value under `a`, under
    /// `b`, and `b - a`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "offset")?;
        for v in Var::ALL {
            write!(w, ",{0}_a,{0}_b,{0}_diff", v.name())?;
        }
        writeln!(w)?;
        for j in 0..self.window_a.len() {
            write!(w, "{}", j as isize - WINDOW_PRE as isize)?;
            for v in Var::ALL {
                let (a, b) = (self.window_a[j][v as usize], self.window_b[j][v as usize]);
                write!(w, ",{},{},{}", fmt_f64(a), fmt_f64(b), fmt_f64(b - a))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn diff(&self, offset: isize, v: Var) -> f64 {
        let j = (offset + WINDOW_PRE as isize) as usize;
        self.window_b[j][v as usize] - self.window_a[j][v as usize]
    }
}

pub fn matched_comparison(a: &dyn Regime, b: &dyn Regime, cfg: &SimConfig) -> Result<MatchedComparison> {
    if a.chain() != b.chain() {
        return Err(Error::Config("matched comparison needs regimes with one shock chain".into()));
    }
    let init = a.initial_state();
    let shocks = draw_shocks(a.chain(), init.shock, cfg.burn_in + cfg.periods, cfg.seed);
    let pa = simulate_shocks(a, init, &shocks, cfg.burn_in)?;
    let mut init_b = b.initial_state();
    init_b.k = init.k;
    init_b.d = init.d;
    let pb = simulate_shocks(b, init_b, &shocks, cfg.burn_in)?;
    let crises = identify_crises(&pa);
    let (_, window_b) = event_window(&pb, &crises.windowed);
    Ok(MatchedComparison {
        window_a: crises.window.clone(),
        window_b,
        crises,
        label_a: a.label(),
        label_b: b.label(),
    })
}

impl CrisisEpisodeSet {
    /// Writes the averaged window: `offset` then [`Var::ALL`].
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "offset")?;
        for v in Var::ALL {
            write!(w, ",{}", v.name())?;
        }
        writeln!(w, ",risk_premium_annualized")?;
        for (j, row) in self.window.iter().enumerate() {
            write!(w, "{}", j as isize - WINDOW_PRE as isize)?;
            for x in row {
                write!(w, ",{}", fmt_f64(*x))?;
            }
            let (r, rp) = (row[Var::R as usize], row[Var::RiskPremium as usize]);
            writeln!(w, ",{}", fmt_f64((r + rp).powi(4) - r.powi(4)))?;
        }
        Ok(())
    }
}
