//! Numerical core for an intraday electricity market equilibrium model with
//! demand-forecast noise and regime-switching production costs.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod error;
pub mod jump;
pub mod model;
pub mod nojump;
pub mod oracle;
pub mod pathsim;
pub mod riccati;

pub use error::{Error, Result};
pub use model::{AgentSpec, ChainPath, MarketScenario, ProductionMode, TimeGrid};
