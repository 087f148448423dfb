//! Closed-form equilibrium without production jumps and without drift.

use alloc::vec::Vec;

use crate::error::{ensure_len, Error, Result};
use crate::model::{check_time, MarketScenario, TimeGrid};
use crate::riccati::RiccatiTable;

/// Weight functions of the no-jump equilibrium, sampled on the grid and
/// evaluable in closed form at any time.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightCurves {
    grid: TimeGrid,
    /// Liquidity coefficients `γ_i`.
    pub gammas: Vec<f64>,
    /// Effective terminal costs `ε_i`.
    pub eps: Vec<f64>,
    /// `γ̄ = (Σ 1/γ_i)⁻¹`.
    pub gamma_bar: f64,
    /// `f[i][k]`.
    pub f: Vec<Vec<f64>>,
    /// `F[i][k] = G[k] / f[i][k]`.
    pub big_f: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    /// `a[i][k]` from the Riccati tables.
    pub a: Vec<Vec<f64>>,
    /// `π[i][k]`.
    pub pi: Vec<Vec<f64>>,
    /// `θ[k] = Σ_i a[i][k] / γ_i`.
    pub theta: Vec<f64>,
}

impl WeightCurves {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn n_agents(&self) -> usize {
        self.gammas.len()
    }

    /// `f_i(t) = γ_i + ½ ε_i (T - t)`.
    pub fn f_at(&self, agent: usize, t: f64) -> f64 {
        self.gammas[agent] + 0.5 * self.eps[agent] * (self.grid.horizon() - t)
    }

    /// Weights `F_i(t)` for every agent.
    pub fn weights_at(&self, t: f64) -> Result<Vec<f64>> {
        check_time(t, self.grid.horizon())?;
        let inv: Vec<f64> = (0..self.n_agents()).map(|i| 1.0 / self.f_at(i, t)).collect();
        let g = 1.0 / inv.iter().sum::<f64>();
        Ok(inv.into_iter().map(|x| g * x).collect())
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }
}

pub fn compute_weights(scenario: &MarketScenario, tables: &[RiccatiTable]) -> Result<WeightCurves> {
    scenario.validate()?;
    if !scenario.is_jump_free() {
        return Err(Error::Precondition(
            "active production jumps: use the jump equilibrium",
        ));
    }
    if !scenario.is_driftless() {
        return Err(Error::Precondition(
            "non-zero demand drift: use the general matrix equilibrium",
        ));
    }
    let n = scenario.n_agents();
    ensure_len(n, tables.len())?;
    let grid = scenario.grid();
    if tables.iter().any(|t| t.grid() != grid) {
        return Err(Error::Precondition("Riccati tables on a different grid"));
    }
    let horizon = grid.horizon();
    let gammas: Vec<f64> = scenario.agents.iter().map(|a| a.gamma).collect();
    let eps: Vec<f64> = scenario
        .agents
        .iter()
        .map(|a| a.effective_cost(a.initial_state))
        .collect::<Result<_>>()?;
    let gamma_bar = 1.0 / gammas.iter().map(|g| 1.0 / g).sum::<f64>();

    let nodes = grid.len();
    let f: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            grid.points()
                .map(|t| gammas[i] + 0.5 * eps[i] * (horizon - t))
                .collect()
        })
        .collect();
    let g: Vec<f64> = (0..nodes)
        .map(|k| 1.0 / (0..n).map(|i| 1.0 / f[i][k]).sum::<f64>())
        .collect();
    let big_f: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..nodes).map(|k| g[k] / f[i][k]).collect())
        .collect();
    let a: Vec<Vec<f64>> = scenario
        .agents
        .iter()
        .zip(tables)
        .map(|(agent, table)| {
            (0..nodes)
                .map(|k| table.a_at_node(agent.initial_state, k))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut pi = alloc::vec![alloc::vec![0.0; nodes]; n];
    let mut theta = alloc::vec![0.0; nodes];
    for k in 0..nodes {
        let denom: f64 = (0..n).map(|i| (1.0 - a[i][k]) / gammas[i]).sum();
        for i in 0..n {
            pi[i][k] = (1.0 - a[i][k]) / gammas[i] / denom;
        }
        theta[k] = (0..n).map(|i| a[i][k] / gammas[i]).sum();
        if 1.0 - gamma_bar * theta[k] <= 0.0 {
            return Err(Error::DegenerateInverse {
                value: 1.0 - gamma_bar * theta[k],
            });
        }
    }
    Ok(WeightCurves {
        grid,
        gammas,
        eps,
        gamma_bar,
        f,
        big_f,
        g,
        a,
        pi,
        theta,
    })
}

/// Marginal costs `c'_i = ε_i (D_i - X_i)`.
pub fn marginal_costs(weights: &WeightCurves, demands: &[f64], inventories: &[f64]) -> Result<Vec<f64>> {
    let n = weights.n_agents();
    ensure_len(n, demands.len())?;
    ensure_len(n, inventories.len())?;
    Ok((0..n)
        .map(|i| weights.eps[i] * (demands[i] - inventories[i]))
        .collect())
}

/// `P̂_t = Σ_i F_i(t) c'_i`.
pub fn price(weights: &WeightCurves, marginal_costs: &[f64], t: f64) -> Result<f64> {
    ensure_len(weights.n_agents(), marginal_costs.len())?;
    let w = weights.weights_at(t)?;
    Ok(w.iter().zip(marginal_costs).map(|(f, c)| f * c).sum())
}

/// `q̂_i = (c'_i - P̂) / (2 f_i(t))`.
pub fn trading_rate(weights: &WeightCurves, agent: usize, marginal_cost: f64, price: f64, t: f64) -> Result<f64> {
    if agent >= weights.n_agents() {
        return Err(Error::Dimension {
            expected: weights.n_agents(),
            got: agent,
        });
    }
    check_time(t, weights.horizon())?;
    Ok(0.5 * (marginal_cost - price) / weights.f_at(agent, t))
}

/// Price and all rates at once; the rates sum to zero up to roundoff.
pub fn equilibrium_at(weights: &WeightCurves, marginal_costs: &[f64], t: f64) -> Result<(f64, Vec<f64>)> {
    let p = price(weights, marginal_costs, t)?;
    let rates = (0..weights.n_agents())
        .map(|i| 0.5 * (marginal_costs[i] - p) / weights.f_at(i, t))
        .collect();
    Ok((p, rates))
}

/// Deterministic price volatility `ζ²` on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VolatilityCurve {
    pub times: Vec<f64>,
    pub zeta_sq: Vec<f64>,
}

pub fn volatility_curve(scenario: &MarketScenario, weights: &WeightCurves) -> Result<VolatilityCurve> {
    let n = scenario.n_agents();
    ensure_len(weights.n_agents(), n)?;
    let grid = weights.grid();
    let horizon = grid.horizon();
    let mut times = Vec::with_capacity(grid.len());
    let mut zeta_sq = Vec::with_capacity(grid.len());
    for (k, t) in grid.points().enumerate() {
        let mut idio = 0.0;
        let mut common = 0.0;
        for (i, agent) in scenario.agents.iter().enumerate() {
            let s = weights.eps[i] * weights.big_f[i][k] * agent.forecast_volatility(t, horizon)?;
            idio += (1.0 - agent.rho * agent.rho) * s * s;
            common += agent.rho * s;
        }
        times.push(t);
        zeta_sq.push(idio + common * common);
    }
    Ok(VolatilityCurve { times, zeta_sq })
}

/// Split of the price into the fundamental part and the permanent impact.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceDecomposition {
    /// `S_t = Σ F_i ε_i (D_i - x0_i)`.
    pub fundamental: f64,
    /// `ε_i F_i(t)`.
    pub impact_coefficients: Vec<f64>,
    /// `-Σ ε_i F_i(t) (X_i - x0_i)`.
    pub impact: f64,
}

impl PriceDecomposition {
    pub fn price(&self) -> f64 {
        self.fundamental + self.impact
    }
}

/// Decomposes the price given demands, inventories and initial inventories.
pub fn decompose_price(
    weights: &WeightCurves,
    demands: &[f64],
    inventories: &[f64],
    initial: &[f64],
    t: f64,
) -> Result<PriceDecomposition> {
    let n = weights.n_agents();
    ensure_len(n, demands.len())?;
    ensure_len(n, inventories.len())?;
    ensure_len(n, initial.len())?;
    let w = weights.weights_at(t)?;
    let impact_coefficients: Vec<f64> = (0..n).map(|i| weights.eps[i] * w[i]).collect();
    let fundamental = (0..n)
        .map(|i| impact_coefficients[i] * (demands[i] - initial[i]))
        .sum();
    let impact = -(0..n)
        .map(|i| impact_coefficients[i] * (inventories[i] - initial[i]))
        .sum::<f64>();
    Ok(PriceDecomposition {
        fundamental,
        impact_coefficients,
        impact,
    })
}
