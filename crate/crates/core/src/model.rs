//! Market description: agents, scenarios and the uniform time grid.
//!
//! Units follow the usual intraday conventions: quantities in MW, time in
//! hours, prices in a generic currency per MW.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the row sums of an intensity matrix.
const ROW_SUM_TOL: f64 = 1e-9;

/// Per-agent model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    /// Liquidity cost coefficient (currency·h/MW²).
    pub gamma: f64,
    /// Imbalance penalty coefficient.
    pub eta: f64,
    /// Demand forecast drift (MW/h).
    pub mu: f64,
    /// Slope of the forecast variance in time to delivery (MW²/h).
    pub sigma_sq: f64,
    /// Residual forecast variance at delivery (MW²).
    pub sigma0_sq: f64,
    /// Correlation with the common noise.
    pub rho: f64,
    /// Initial demand forecast (MW).
    pub d0: f64,
    /// Initial inventory (MW).
    pub x0: f64,
    /// Marginal-cost coefficients, one per production state.
    pub cost_states: Vec<f64>,
    /// Index of the initial production state.
    pub initial_state: usize,
    /// Generator of the production-state chain, row-major.
    pub intensity: Vec<Vec<f64>>,
}

impl AgentSpec {
    /// Agent with a single production state, unit-free forecast noise set to
    /// zero and zero initial demand and inventory.
    pub fn single_state(gamma: f64, eta: f64, cost: f64) -> Self {
        Self {
            gamma,
            eta,
            mu: 0.0,
            sigma_sq: 0.0,
            sigma0_sq: 0.0,
            rho: 0.0,
            d0: 0.0,
            x0: 0.0,
            cost_states: vec![cost],
            initial_state: 0,
            intensity: vec![vec![0.0]],
        }
    }

    /// Two-state outage chain starting in `good` and jumping to the absorbing
    /// `bad` state with rate `lambda`.
    pub fn outage(gamma: f64, eta: f64, good: f64, bad: f64, lambda: f64) -> Self {
        Self {
            cost_states: vec![good, bad],
            initial_state: 0,
            intensity: vec![vec![-lambda, lambda], vec![0.0, 0.0]],
            ..Self::single_state(gamma, eta, good)
        }
    }

    pub fn with_forecast(mut self, mu: f64, sigma_sq: f64, sigma0_sq: f64, rho: f64) -> Self {
        self.mu = mu;
        self.sigma_sq = sigma_sq;
        self.sigma0_sq = sigma0_sq;
        self.rho = rho;
        self
    }

    pub fn with_positions(mut self, d0: f64, x0: f64) -> Self {
        self.d0 = d0;
        self.x0 = x0;
        self
    }

    /// Number of production states.
    pub fn state_count(&self) -> usize {
        self.cost_states.len()
    }

    pub fn cost(&self, state: usize) -> Result<f64> {
        self.cost_states
            .get(state)
            .copied()
            .ok_or(Error::UnknownState {
                state,
                count: self.cost_states.len(),
            })
    }

    /// Effective terminal cost `ε = η e / (η + e)` in production state `state`.
    pub fn effective_cost(&self, state: usize) -> Result<f64> {
        let e = self.cost(state)?;
        Ok(self.eta * e / (self.eta + e))
    }

    /// Terminal value of the Riccati system, `ε / 2`.
    pub fn terminal_y2(&self, state: usize) -> Result<f64> {
        Ok(0.5 * self.effective_cost(state)?)
    }

    /// Whether the production chain can leave its initial state.
    pub fn has_active_jumps(&self) -> bool {
        self.intensity
            .get(self.initial_state)
            .map(|row| row.iter().any(|&l| l != 0.0))
            .unwrap_or(false)
    }

    /// Whether the intensity matrix is identically zero.
    pub fn is_constant_chain(&self) -> bool {
        self.intensity.iter().flatten().all(|&l| l == 0.0)
    }

    /// Perfect demand forecast (no forecast noise at all).
    pub fn is_deterministic(&self) -> bool {
        self.sigma_sq == 0.0 && self.sigma0_sq == 0.0
    }

    /// Forecast volatility `sqrt(σ²(T - t) + σ0²)` at time `t` for horizon `T`.
    pub fn forecast_volatility(&self, t: f64, horizon: f64) -> Result<f64> {
        check_time(t, horizon)?;
        Ok(libm::sqrt((self.sigma_sq * (horizon - t) + self.sigma0_sq).max(0.0)))
    }

    /// Optimal terminal production in state `state` for residual demand
    /// `D_T - X_T`.
    pub fn optimal_production(
        &self,
        state: usize,
        residual: f64,
        mode: ProductionMode,
    ) -> Result<f64> {
        let e = self.cost(state)?;
        let base = match mode {
            ProductionMode::Unconstrained => residual,
            ProductionMode::NonNegative => residual.max(0.0),
        };
        Ok(self.eta / (self.eta + e) * base)
    }

    /// Checks every parameter invariant, reporting the first violation.
    pub fn validate(&self, agent: usize) -> Result<()> {
        let bad = |field, constraint| Err(Error::InvalidAgent {
            agent,
            field,
            constraint,
        });
        let finite = [
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("mu", self.mu),
            ("sigma_sq", self.sigma_sq),
            ("sigma0_sq", self.sigma0_sq),
            ("rho", self.rho),
            ("d0", self.d0),
            ("x0", self.x0),
        ];
        for (field, v) in finite {
            if !v.is_finite() {
                return bad(field, "finiteness");
            }
        }
        if self.gamma <= 0.0 {
            return bad("gamma", "gamma > 0");
        }
        if self.eta <= 0.0 {
            return bad("eta", "eta > 0");
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return bad("rho", "rho in [-1, 1]");
        }
        if self.sigma_sq < 0.0 {
            return bad("sigma_sq", "sigma_sq >= 0");
        }
        if self.sigma0_sq < 0.0 {
            return bad("sigma0_sq", "sigma0_sq >= 0");
        }
        if self.cost_states.is_empty() {
            return bad("cost_states", "at least one state");
        }
        if self
            .cost_states
            .iter()
            .any(|&e| !e.is_finite() || e <= 0.0)
        {
            return bad("cost_states", "every cost state > 0");
        }
        if self.initial_state >= self.cost_states.len() {
            return bad("initial_state", "index within cost_states");
        }
        let m = self.cost_states.len();
        if self.intensity.len() != m || self.intensity.iter().any(|r| r.len() != m) {
            return bad("intensity", "square matrix matching cost_states");
        }
        for (i, row) in self.intensity.iter().enumerate() {
            let mut sum = 0.0;
            let mut scale = 0.0_f64;
            for (j, &l) in row.iter().enumerate() {
                if !l.is_finite() {
                    return bad("intensity", "finiteness");
                }
                if i == j && l > 0.0 {
                    return bad("intensity", "diagonal <= 0");
                }
                if i != j && l < 0.0 {
                    return bad("intensity", "off-diagonal >= 0");
                }
                sum += l;
                scale = scale.max(l.abs());
            }
            if sum.abs() > ROW_SUM_TOL * scale.max(1.0) {
                return bad("intensity", "rows sum to 0");
            }
        }
        Ok(())
    }
}

/// Whether terminal production may be negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProductionMode {
    Unconstrained,
    NonNegative,
}

/// An N-agent market with a single delivery time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketScenario {
    /// Delivery time `T` in hours.
    pub horizon: f64,
    /// Number of uniform grid steps `K`.
    pub grid_steps: usize,
    pub agents: Vec<AgentSpec>,
}

impl MarketScenario {
    pub fn new(horizon: f64, grid_steps: usize, agents: Vec<AgentSpec>) -> Result<Self> {
        let s = Self {
            horizon,
            grid_steps,
            agents,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            return Err(Error::InvalidScenario {
                field: "horizon",
                constraint: "horizon > 0",
            });
        }
        if self.grid_steps < 2 {
            return Err(Error::InvalidScenario {
                field: "grid_steps",
                constraint: "grid_steps >= 2",
            });
        }
        if self.agents.is_empty() {
            return Err(Error::InvalidScenario {
                field: "agents",
                constraint: "at least one agent",
            });
        }
        for (i, a) in self.agents.iter().enumerate() {
            a.validate(i)?;
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.horizon, self.grid_steps)
    }

    /// Same market on a different grid.
    pub fn with_steps(&self, grid_steps: usize) -> Self {
        Self {
            grid_steps,
            ..self.clone()
        }
    }

    pub fn forecast_volatility(&self, agent: usize, t: f64) -> Result<f64> {
        let a = self.agents.get(agent).ok_or(Error::Dimension {
            expected: self.agents.len(),
            got: agent,
        })?;
        a.forecast_volatility(t, self.horizon)
    }

    /// No agent can change production state.
    pub fn is_jump_free(&self) -> bool {
        self.agents.iter().all(|a| !a.has_active_jumps())
    }

    pub fn is_driftless(&self) -> bool {
        self.agents.iter().all(|a| a.mu == 0.0)
    }

    pub fn is_deterministic(&self) -> bool {
        self.agents.iter().all(AgentSpec::is_deterministic)
    }
}

/// Uniform grid `0 = t_0 < ... < t_K = T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    /// # Panics
    /// If `steps == 0` or the horizon is not a positive finite number.
    pub fn new(horizon: f64, steps: usize) -> Self {
        assert!(steps > 0, "time grid needs at least one step");
        assert!(horizon.is_finite() && horizon > 0.0, "horizon must be positive");
        Self { horizon, steps }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes `K + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn point(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.point(k))
    }

    /// Bracketing node and linear weight: `t = (1 - w) t_k + w t_{k+1}`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        check_time(t, self.horizon)?;
        let x = t / self.dt();
        let k = (libm::floor(x) as usize).min(self.steps - 1);
        let w = (x - k as f64).clamp(0.0, 1.0);
        Ok((k, w))
    }

    /// Node index if `t` coincides with a node (to 1e-12 relative).
    pub fn node_of(&self, t: f64) -> Option<usize> {
        let x = t / self.dt();
        let k = libm::round(x);
        if k >= 0.0 && (x - k).abs() <= 1e-9 && (k as usize) <= self.steps {
            Some(k as usize)
        } else {
            None
        }
    }
}

/// Piecewise-constant production-state path: `initial` until the first jump,
/// then each `(time, state)` from its time on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainPath {
    pub initial: usize,
    pub jumps: Vec<(f64, usize)>,
}

impl ChainPath {
    pub fn constant(state: usize) -> Self {
        Self {
            initial: state,
            jumps: Vec::new(),
        }
    }

    /// Right-continuous state at `t`.
    pub fn state_at(&self, t: f64) -> usize {
        self.jumps
            .iter()
            .take_while(|(s, _)| *s <= t)
            .last()
            .map_or(self.initial, |&(_, e)| e)
    }

    /// Left limit of the state at `t`.
    pub fn state_before(&self, t: f64) -> usize {
        self.jumps
            .iter()
            .take_while(|(s, _)| *s < t)
            .last()
            .map_or(self.initial, |&(_, e)| e)
    }

    pub fn first_jump(&self) -> Option<f64> {
        self.jumps.first().map(|j| j.0)
    }

    /// States at the grid nodes.
    pub fn on_grid(&self, grid: &TimeGrid) -> Vec<usize> {
        grid.points().map(|t| self.state_at(t)).collect()
    }
}

pub(crate) fn check_time(t: f64, horizon: f64) -> Result<()> {
    let slack = 1e-12 * horizon.max(1.0);
    if t.is_nan() || t < -slack || t > horizon + slack {
        Err(Error::TimeOutOfRange { t, horizon })
    } else {
        Ok(())
    }
}
