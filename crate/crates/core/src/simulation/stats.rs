use crate::keyvalue::{fmt_f64, KeyValues};
use crate::simulation::crisis::identify_crises;
use crate::simulation::path::{SimPath, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarSummary {
    pub mean: f64,
    pub std: f64,
}

/// Table-style summary of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicStats {
    pub periods: usize,
    /// Mean gross quarterly riskless rate.
    pub mean_r: f64,
    /// Mean of `r^4 - 1`.
    pub mean_r_annualized: f64,
    /// Mean of `D/(qK)`.
    pub mean_leverage: f64,
    pub disaster_prob: f64,
    /// Crisis onsets per period.
    pub crisis_prob: f64,
    pub crisis_count: usize,
    pub vars: Vec<(Var, VarSummary)>,
}

fn summary(x: &[f64]) -> VarSummary {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    VarSummary { mean, std: var.sqrt() }
}

pub fn ergodic_stats(path: &SimPath) -> ErgodicStats {
    let n = path.len();
    let crises = identify_crises(path);
    let mean = |v: Var| summary(path.col(v)).mean;
    let r_ann = path.col(Var::R).iter().map(|r| r.powi(4) - 1.0).sum::<f64>() / n as f64;
    ErgodicStats {
        periods: n,
        mean_r: mean(Var::R),
        mean_r_annualized: r_ann,
        mean_leverage: mean(Var::Leverage),
        disaster_prob: path.disaster.iter().filter(|d| **d).count() as f64 / n as f64,
        crisis_prob: crises.onsets.len() as f64 / n as f64,
        crisis_count: crises.onsets.len(),
        vars: Var::ALL.iter().map(|v| (*v, summary(path.col(*v)))).collect(),
    }
}

impl ErgodicStats {
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("periods", self.periods);
        kv.set("mean_r_gross_quarterly", fmt_f64(self.mean_r));
        kv.set("mean_r_annualized", fmt_f64(self.mean_r_annualized));
        kv.set("mean_leverage", fmt_f64(self.mean_leverage));
        kv.set("disaster_prob", fmt_f64(self.disaster_prob));
        kv.set("crisis_prob", fmt_f64(self.crisis_prob));
        kv.set("crisis_count", self.crisis_count);
        for (v, s) in &self.vars {
            kv.set(&format!("mean.{}", v.name()), fmt_f64(s.mean));
            kv.set(&format!("std.{}", v.name()), fmt_f64(s.std));
        }
        kv
    }

    /// `statistic,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("statistic,value\n");
        for (k, v) in self.to_key_values().iter() {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }
}

/// Two-half comparison of means with batch-means standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCheck {
    /// `(variable, |mean_1 - mean_2| / se)` per variable.
    pub z_scores: Vec<(Var, f64)>,
}

impl SplitCheck {
    pub fn max_z(&self) -> f64 {
        self.z_scores.iter().fold(0.0f64, |m, (_, z)| m.max(*z))
    }
}

/// Batch-means standard error of the mean with `batches` batches.
fn batch_se(x: &[f64], batches: usize) -> f64 {
    let b = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|i| x[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64).collect();
    summary(&means).std / (batches as f64).sqrt()
}

/// Compares the means of the two halves of `path` for the listed variables.
pub fn split_sample_check(path: &SimPath, vars: &[Var]) -> SplitCheck {
    let h = path.len() / 2;
    let z_scores = vars
        .iter()
        .map(|v| {
            let (a, b) = path.col(*v).split_at(h);
            let (ma, mb) = (summary(a).mean, summary(&b[..h]).mean);
            let se = (batch_se(a, 50).powi(2) + batch_se(&b[..h], 50).powi(2)).sqrt();
            let z = if se > 0.0 { (ma - mb).abs() / se } else { 0.0 };
            (*v, z)
        })
        .collect();
    SplitCheck { z_scores }
}
