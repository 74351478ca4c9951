//! Ergodic simulation, summary statistics and crisis event studies.
//!
//! Any solved regime (competitive equilibrium with or without taxes, first
//! best, Ramsey) implements [`Regime`]; the simulator only sees states,
//! records and the shock chain.

mod crisis;
mod path;
mod stats;

pub use crisis::{identify_crises, matched_comparison, CrisisEpisodeSet, MatchedComparison, WINDOW_POST, WINDOW_PRE};
pub use path::{draw_shocks, simulate, simulate_shocks, Record, Regime, SimConfig, SimPath, SimState, Var};
pub use stats::{ergodic_stats, split_sample_check, ErgodicStats, SplitCheck, VarSummary};
