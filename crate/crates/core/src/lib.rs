//! Global solution of a two-agent real business cycle economy with
//! experts, workers and a single riskless deposit: competitive equilibrium
//! under arbitrary tax schedules, the planner's first best, and the
//! full-commitment Ramsey plan, together with simulation, crisis event
//! studies and welfare comparisons.

pub mod checkpoint;
pub mod equilibrium;
pub mod first_best;
pub mod error;
pub mod keyvalue;
pub mod model;
pub mod policy_rules;
pub mod ramsey;
pub mod real;
pub mod simulation;
pub mod spline;
pub mod util;
pub mod welfare;

pub use error::{Error, Result};
pub use model::{ModelParams, ShockChain};
