//! Utility-indifference valuation and cross-hedging of claims on a
//! non-traded asset under exponential forward performance preferences.
//!
//! The crate is organised by task:
//!
//! * [`market_model`]: parameters, exact lognormal path simulation and
//!   estimation helpers;
//! * [`filter`]: Kalman–Bucy filtering of the Sharpe ratios from prices;
//! * [`forward_utility`]: forward performance utilities, risk tolerance
//!   and residual-based verification of their defining equations;
//! * [`euro_pricer`]: European indifference prices by finite differences,
//!   with closed-form oracles and the small-γ expansion;
//! * [`american_pricer`]: the obstacle problem for early exercise;
//! * [`hedging_sim`]: Monte Carlo hedging experiments and identity checks.

pub mod american_pricer;
pub mod error;
pub mod euro_pricer;
pub mod filter;
pub mod forward_utility;
pub mod hedging_sim;
pub mod market_model;
pub mod numerics;

pub use error::{Error, Result};

/// Version of the engine, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
