//! Scenario files, parallel ensembles, CSV outputs and the command-line tool
//! for the intraday market equilibrium model in `intraday-eq-core`.

pub mod checks;
pub mod cli;
pub mod ensemble;
pub mod io;
pub mod manifest;
pub mod scenario;

pub use intraday_eq_core as core;
pub use scenario::{load_scenario, ScenarioError};
