mod params;
pub mod primitives;
mod shocks;

pub use params::ModelParams;
pub use primitives::{
    capital_price_and_profit, capital_production, measures_to_weights, production,
    utility_expert, utility_worker, weight_to_measure,
};
pub use shocks::{
    build_shock_chain, chain_moments, discretize_productivity, stationary_distribution, ShockChain,
};
