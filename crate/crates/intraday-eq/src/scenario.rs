//! Scenario documents on disk.

use std::fs;
use std::path::{Path, PathBuf};

use intraday_eq_core::pathsim::SimMode;
use intraday_eq_core::{analysis, MarketScenario};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {}: {err}", path.display())]
    Io {
        path: PathBuf,
        err: std::io::Error,
    },
    #[error("{}: schema violation: {err}", path.display())]
    Schema {
        path: PathBuf,
        err: serde_json::Error,
    },
    #[error("{}: {err}", path.display())]
    Invalid {
        path: PathBuf,
        err: intraday_eq_core::Error,
    },
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str, path: &Path) -> Result<MarketScenario, ScenarioError> {
    let scenario: MarketScenario = serde_json::from_str(text).map_err(|err| ScenarioError::Schema {
        path: path.to_path_buf(),
        err,
    })?;
    scenario.validate().map_err(|err| ScenarioError::Invalid {
        path: path.to_path_buf(),
        err,
    })?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<MarketScenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|err| ScenarioError::Io {
        path: path.to_path_buf(),
        err,
    })?;
    parse_scenario(&text, path)
}

pub fn to_json(scenario: &MarketScenario) -> String {
    serde_json::to_string_pretty(scenario).expect("scenario serializes")
}

/// Reads `agents[0]` and `agents[1]` as the two agent types and builds the
/// market with `round(alpha * n)` agents of the first type.
pub fn expand_mixture(base: &MarketScenario, alpha: f64, n: usize) -> intraday_eq_core::Result<MarketScenario> {
    if base.agents.len() != 2 {
        return Err(intraday_eq_core::Error::Precondition("a mixture needs exactly two agent types"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(intraday_eq_core::Error::Precondition("alpha must lie in [0, 1]"));
    }
    let n_type1 = (alpha * n as f64).round() as usize;
    analysis::mixture_market(&base.agents[0], &base.agents[1], n_type1, n, base.horizon, base.grid_steps)
}

/// Closed form when the market has no jumps and no drift, the exact
/// two-agent solver when it applies, the general feedback otherwise.
pub fn auto_mode(scenario: &MarketScenario) -> SimMode {
    if scenario.is_jump_free() && scenario.is_driftless() {
        SimMode::NoJumpClosedForm
    } else if scenario.n_agents() == 2 && !scenario.agents[0].has_active_jumps() && scenario.is_deterministic() {
        SimMode::TwoAgentJump
    } else {
        SimMode::LargeNApprox
    }
}
