//! Competitive equilibrium under a tax schedule.

mod regime;
mod solution;
mod solver;
mod steady;
pub mod system;
mod taxes;

pub use solution::{
    solve_equilibrium, solve_equilibrium_from, EquilibriumSolution, ResidualReport, RiskMetrics,
    StateEval, EQUATION_NAMES,
};
pub use solver::{GridSpec, Iterate, SolverConfig, Stage, StageLog, REFERENCE_LEVERAGE};
pub use steady::{deterministic_steady_state, SteadyState};
pub use taxes::{NoTaxes, SimpleRule, StateTaxes, TaxSchedule};
