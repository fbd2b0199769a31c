//! Spectrum reservation for a white-space broker: demand laws, the
//! reservation market, screening contracts, aggregation and a Monte Carlo
//! simulator.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod contract;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod market;
pub mod numeric;
pub mod sim;

pub use contract::{build_contract, ContractMenu, FeasibilityReport};
pub use distributions::{check_ifr, convolve, DemandDistribution, RandomUserModel};
pub use error::{Error, Result};
pub use market::{DemandEnvironment, MarketParams, RiskScheme};
pub use sim::{Policy, SimConfig, SimulationReport};
