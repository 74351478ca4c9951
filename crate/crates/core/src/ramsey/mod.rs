//! Full-commitment optimal policy in recursive saddle-point form, with taxes
//! backed out from the planner's allocation.

mod solution;
mod solver;
pub mod system;

pub use solution::{solve_ramsey, BackedOutTaxes, RamseySolution};
pub use solver::{RamseyConfig, RamseyLog, RamseyPolicies};
