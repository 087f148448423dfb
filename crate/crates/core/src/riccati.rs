//! Per-agent Riccati system for the regime-switching coefficient `Y²`.
//!
//! The backward system `y'_ē = y_ē²/γ - Σ_e λ(ē,e) y_e`, `y_ē(T) = ½ηē/(η+ē)`
//! is integrated in the forward variable `s = T - t` with classical RK4.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{check_time, AgentSpec, TimeGrid};

/// Values in `(-NEG_TOL, 0)` are treated as roundoff and clamped to zero.
pub const NEG_TOL: f64 = 1e-12;
/// RK4 step times stiffness bound kept below this value when substeps adapt.
const STIFF_STEP: f64 = 0.5;
const MAX_SUBSTEPS: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RiccatiOptions {
    /// RK4 substeps per grid step.
    pub substeps: usize,
    /// Raise the substep count when the grid is coarse relative to `1/γ`.
    pub adaptive: bool,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            substeps: 10,
            adaptive: true,
        }
    }
}

/// Solution `y[e][k]` of one agent's Riccati system on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiTable {
    agent: usize,
    grid: TimeGrid,
    gamma: f64,
    intensity: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    /// `integrals[e][k] = ∫ y_e` over grid step `k`.
    integrals: Vec<Vec<f64>>,
    clamped: usize,
    substeps: usize,
}

impl RiccatiTable {
    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn state_count(&self) -> usize {
        self.values.len()
    }

    /// Node values for one state, indexed by grid node.
    pub fn state_values(&self, state: usize) -> Result<&[f64]> {
        self.values
            .get(state)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownState {
                state,
                count: self.values.len(),
            })
    }

    pub fn value(&self, state: usize, node: usize) -> Result<f64> {
        let row = self.state_values(state)?;
        row.get(node).copied().ok_or(Error::Dimension {
            expected: row.len(),
            got: node,
        })
    }

    /// Number of roundoff negatives that were clamped to zero.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    /// RK4 substeps actually used per grid step.
    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn min_value(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `y_{e}(t)`, linearly interpolated between nodes.
    pub fn y2_at(&self, state: usize, t: f64) -> Result<f64> {
        let row = self.state_values(state)?;
        let (k, w) = self.grid.locate(t)?;
        if w == 0.0 {
            return Ok(row[k]);
        }
        Ok((1.0 - w) * row[k] + w * row[k + 1])
    }

    /// Backward-time derivative `y'_e` at a node, from the ODE itself.
    pub fn derivative(&self, state: usize, node: usize) -> Result<f64> {
        let y = self.value(state, node)?;
        let coupling: f64 = self.intensity[state]
            .iter()
            .enumerate()
            .map(|(e, l)| l * self.values[e][node])
            .sum();
        Ok(y * y / self.gamma - coupling)
    }

    /// `y_e(t)` by cubic Hermite interpolation using the ODE derivatives;
    /// fourth-order accurate between nodes.
    pub fn y2_smooth(&self, state: usize, t: f64) -> Result<f64> {
        let row = self.state_values(state)?;
        let (k, w) = self.grid.locate(t)?;
        if w == 0.0 {
            return Ok(row[k]);
        }
        let h = self.grid.dt();
        let (d0, d1) = (self.derivative(state, k)?, self.derivative(state, k + 1)?);
        let w2 = w * w;
        let w3 = w2 * w;
        Ok((2.0 * w3 - 3.0 * w2 + 1.0) * row[k]
            + (w3 - 2.0 * w2 + w) * h * d0
            + (-2.0 * w3 + 3.0 * w2) * row[k + 1]
            + (w3 - w2) * h * d1)
    }

    /// Jump sizes `y_{e'}(t) - y_{from}(t)` for every target state `e'`.
    pub fn jump_sizes(&self, from: usize, t: f64) -> Result<Vec<f64>> {
        let base = self.y2_at(from, t)?;
        (0..self.values.len())
            .map(|e| Ok(self.y2_at(e, t)? - base))
            .collect()
    }

    /// `a_t = (T - t) y_e(t) / γ`.
    pub fn a_coefficient(&self, state: usize, t: f64) -> Result<f64> {
        let y = self.y2_at(state, t)?;
        Ok((self.grid.horizon() - t).max(0.0) * y / self.gamma)
    }

    /// `a` at a grid node, without interpolation.
    pub fn a_at_node(&self, state: usize, node: usize) -> Result<f64> {
        let y = self.value(state, node)?;
        let t = self.grid.point(node);
        Ok((self.grid.horizon() - t) * y / self.gamma)
    }

    /// `∫ y_e` over grid step `k`, integrated together with `y` itself.
    pub fn step_integral(&self, state: usize, k: usize) -> Result<f64> {
        let row = self.state_values(state)?;
        row.get(k + 1).ok_or(Error::Dimension {
            expected: row.len() - 1,
            got: k,
        })?;
        Ok(self.integrals[state][k])
    }

    /// `exp(-(1/γ) ∫_t^T y_e ds)` at every node for a frozen state.
    pub fn tail_discount(&self, state: usize) -> Result<Vec<f64>> {
        let n = self.grid.len();
        let mut out = vec![1.0; n];
        let mut integral = 0.0;
        for k in (0..n - 1).rev() {
            integral += self.step_integral(state, k)?;
            out[k] = libm::exp(-integral / self.gamma);
        }
        Ok(out)
    }

    /// `Γ_t = exp(-(1/γ) ∫_0^t y_{β_s}(s) ds)` along a grid-projected state
    /// path (state `states[k]` holds on `[t_k, t_{k+1})`).
    pub fn discount_curve(&self, states: &[usize]) -> Result<DiscountCurve> {
        let n = self.grid.len();
        if states.len() < n - 1 {
            return Err(Error::Dimension {
                expected: n,
                got: states.len(),
            });
        }
        let mut values = Vec::with_capacity(n);
        values.push(1.0);
        let mut integral = 0.0;
        for k in 0..n - 1 {
            integral += self.step_integral(states[k], k)?;
            values.push(libm::exp(-integral / self.gamma));
        }
        Ok(DiscountCurve { values })
    }
}

/// `Γ_t` sampled on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscountCurve {
    pub values: Vec<f64>,
}

/// Closed-form `Y_T / (1 + Y_T (T - t)/γ)` for a frozen cost state.
pub fn closed_form_y2(agent: &AgentSpec, state: usize, t: f64, horizon: f64) -> Result<f64> {
    check_time(t, horizon)?;
    let yt = agent.terminal_y2(state)?;
    Ok(yt / (1.0 + yt * (horizon - t).max(0.0) / agent.gamma))
}

/// Table filled from the closed form; requires a constant chain.
pub fn closed_form_table(agent: &AgentSpec, index: usize, grid: TimeGrid) -> Result<RiccatiTable> {
    agent.validate(index)?;
    if !agent.is_constant_chain() {
        return Err(Error::Precondition("closed-form Riccati table needs a constant chain"));
    }
    let horizon = grid.horizon();
    let values = (0..agent.state_count())
        .map(|e| {
            grid.points()
                .map(|t| closed_form_y2(agent, e, t, horizon))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let gamma = agent.gamma;
    let integrals = (0..agent.state_count())
        .map(|e| {
            let yt = agent.terminal_y2(e)?;
            let log_term = |t: f64| gamma * libm::log1p(yt * (horizon - t).max(0.0) / gamma);
            Ok((0..grid.steps())
                .map(|k| log_term(grid.point(k)) - log_term(grid.point(k + 1)))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RiccatiTable {
        agent: index,
        grid,
        gamma,
        intensity: agent.intensity.clone(),
        values,
        integrals,
        clamped: 0,
        substeps: 0,
    })
}

/// `Ĉ = (γ/2) Σ_e (Σ_ē λ(ē,e))²`, an upper bound for `Σ_e dŷ_e/ds`.
pub fn boundedness_constant(agent: &AgentSpec) -> f64 {
    let m = agent.state_count();
    let total: f64 = (0..m)
        .map(|e| {
            let col: f64 = agent.intensity.iter().map(|row| row[e]).sum();
            col * col
        })
        .sum();
    0.5 * agent.gamma * total
}

pub fn solve_riccati(agent: &AgentSpec, index: usize, grid: TimeGrid) -> Result<RiccatiTable> {
    solve_riccati_with(agent, index, grid, RiccatiOptions::default())
}

pub fn solve_riccati_with(
    agent: &AgentSpec,
    index: usize,
    grid: TimeGrid,
    options: RiccatiOptions,
) -> Result<RiccatiTable> {
    agent.validate(index)?;
    let m = agent.state_count();
    let gamma = agent.gamma;
    let lambda = &agent.intensity;
    let y0: Vec<f64> = (0..m)
        .map(|e| agent.terminal_y2(e))
        .collect::<Result<_>>()?;

    let dt = grid.dt();
    let mut substeps = options.substeps.max(1);
    if options.adaptive {
        let ymax = y0.iter().copied().fold(0.0, f64::max);
        let lmax = (0..m).map(|e| lambda[e][e].abs()).fold(0.0, f64::max);
        let stiffness = 2.0 * ymax / gamma + 2.0 * lmax;
        let needed = libm::ceil(dt * stiffness / STIFF_STEP);
        if !needed.is_finite() || needed > MAX_SUBSTEPS as f64 {
            return Err(Error::TooStiff {
                substeps: if needed.is_finite() { needed as usize } else { usize::MAX },
            });
        }
        substeps = substeps.max(needed as usize);
    }
    let h = dt / substeps as f64;

    let rhs = |y: &[f64], out: &mut [f64]| {
        for (eb, o) in out.iter_mut().enumerate() {
            let coupling: f64 = lambda[eb].iter().zip(y).map(|(l, v)| l * v).sum();
            *o = -y[eb] * y[eb] / gamma + coupling;
        }
    };

    let k_steps = grid.steps();
    let mut values = vec![vec![0.0; k_steps + 1]; m];
    let mut integrals = vec![vec![0.0; k_steps]; m];
    let mut area = vec![0.0; m];
    for e in 0..m {
        values[e][k_steps] = y0[e];
    }
    let mut y = y0;
    let mut k1 = vec![0.0; m];
    let mut k2 = vec![0.0; m];
    let mut k3 = vec![0.0; m];
    let mut k4 = vec![0.0; m];
    let mut tmp = vec![0.0; m];
    let mut clamped = 0;
    for j in 1..=k_steps {
        area.iter_mut().for_each(|a| *a = 0.0);
        for _ in 0..substeps {
            rhs(&y, &mut k1);
            for e in 0..m {
                area[e] += h / 6.0 * y[e];
                tmp[e] = y[e] + 0.5 * h * k1[e];
            }
            rhs(&tmp, &mut k2);
            for e in 0..m {
                area[e] += h / 3.0 * tmp[e];
                tmp[e] = y[e] + 0.5 * h * k2[e];
            }
            rhs(&tmp, &mut k3);
            for e in 0..m {
                area[e] += h / 3.0 * tmp[e];
                tmp[e] = y[e] + h * k3[e];
            }
            rhs(&tmp, &mut k4);
            for e in 0..m {
                area[e] += h / 6.0 * tmp[e];
                y[e] += h / 6.0 * (k1[e] + 2.0 * k2[e] + 2.0 * k3[e] + k4[e]);
            }
        }
        let node = k_steps - j;
        for e in 0..m {
            let v = y[e];
            if !v.is_finite() {
                return Err(Error::NonFinite("Riccati solution"));
            }
            if v < 0.0 {
                if v <= -NEG_TOL {
                    return Err(Error::NegativeRiccati {
                        agent: index,
                        state: e,
                        node,
                        value: v,
                    });
                }
                y[e] = 0.0;
                clamped += 1;
            }
            values[e][node] = y[e];
            integrals[e][node] = area[e];
        }
    }

    Ok(RiccatiTable {
        agent: index,
        grid,
        gamma,
        intensity: lambda.clone(),
        values,
        integrals,
        clamped,
        substeps,
    })
}
