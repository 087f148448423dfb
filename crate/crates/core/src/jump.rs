//! Equilibrium with production-cost jumps: general matrix formulas, the
//! closed-form two-agent solution with one jumping agent and the large-market
//! approximation.

use alloc::vec;
use alloc::vec::Vec;

pub use nalgebra::DMatrix;
use nalgebra::DVector;

use crate::error::{ensure_len, Error, Result};
use crate::model::{check_time, ChainPath, MarketScenario, TimeGrid};
use crate::riccati::RiccatiTable;

/// Smallest admissible `1 - γ̄θ`.
pub const INVERSE_TOL: f64 = 1e-12;
/// Below this `a¹` the two-agent price is evaluated without dividing by `a¹`.
pub const A_GUARD: f64 = 1e-8;

/// Inputs of the matrix formulas at one time and one joint state.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixState {
    pub gammas: Vec<f64>,
    pub a: Vec<f64>,
    /// `Δ_i = Y_i (D_i - X_i)`.
    pub delta: Vec<f64>,
    /// `ã_i = μ_i γ_i a_i`.
    pub a_tilde: Vec<f64>,
    /// Coupling term, zero unless supplied.
    pub b: Vec<f64>,
}

impl MatrixState {
    pub fn new(gammas: Vec<f64>, a: Vec<f64>, delta: Vec<f64>, a_tilde: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = gammas.len();
        if n == 0 {
            return Err(Error::Empty("agents"));
        }
        ensure_len(n, a.len())?;
        ensure_len(n, delta.len())?;
        ensure_len(n, a_tilde.len())?;
        ensure_len(n, b.len())?;
        if gammas.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(Error::Precondition("gammas must be positive"));
        }
        let s = Self {
            gammas,
            a,
            delta,
            a_tilde,
            b,
        };
        s.denominator()?;
        Ok(s)
    }

    /// State of the market built from Riccati tables, joint cost states,
    /// demands and inventories, with `b = 0`.
    pub fn from_market(
        scenario: &MarketScenario,
        tables: &[RiccatiTable],
        states: &[usize],
        t: f64,
        demands: &[f64],
        inventories: &[f64],
    ) -> Result<Self> {
        let n = scenario.n_agents();
        ensure_len(n, tables.len())?;
        ensure_len(n, states.len())?;
        ensure_len(n, demands.len())?;
        ensure_len(n, inventories.len())?;
        check_time(t, scenario.horizon)?;
        let mut gammas = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut delta = Vec::with_capacity(n);
        let mut a_tilde = Vec::with_capacity(n);
        for (i, agent) in scenario.agents.iter().enumerate() {
            let y = tables[i].y2_at(states[i], t)?;
            let ai = (scenario.horizon - t).max(0.0) * y / agent.gamma;
            gammas.push(agent.gamma);
            a.push(ai);
            delta.push(y * (demands[i] - inventories[i]));
            a_tilde.push(agent.mu * agent.gamma * ai);
        }
        Self::new(gammas, a, delta, a_tilde, vec![0.0; n])
    }

    pub fn n(&self) -> usize {
        self.gammas.len()
    }

    pub fn gamma_bar(&self) -> f64 {
        1.0 / self.gammas.iter().map(|g| 1.0 / g).sum::<f64>()
    }

    pub fn theta(&self) -> f64 {
        self.a.iter().zip(&self.gammas).map(|(a, g)| a / g).sum()
    }

    /// `1 - γ̄θ`, checked to be positive.
    pub fn denominator(&self) -> Result<f64> {
        let d = 1.0 - self.gamma_bar() * self.theta();
        if !(d > INVERSE_TOL) {
            return Err(Error::DegenerateInverse { value: d });
        }
        Ok(d)
    }

    /// `v = 2Δ + 2ã + γ̄ J b`.
    pub fn driver(&self) -> Vec<f64> {
        let gb = self.gamma_bar();
        (0..self.n())
            .map(|i| 2.0 * self.delta[i] + 2.0 * self.a_tilde[i] + gb * self.b[i] / self.gammas[i])
            .collect()
    }

    /// `A` (every column equal to `a`).
    pub fn a_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, _| self.a[i])
    }

    /// `J = diag(1/γ_i)`.
    pub fn j_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(self.n(), self.gammas.iter().map(|g| 1.0 / g)))
    }
}

/// `(I - γ̄ A J)⁻¹ = I + γ̄/(1 - γ̄θ) A J`.
pub fn invert_rank_one(a: &[f64], gammas: &[f64]) -> Result<DMatrix<f64>> {
    let n = gammas.len();
    ensure_len(n, a.len())?;
    let state = MatrixState::new(gammas.to_vec(), a.to_vec(), vec![0.0; n], vec![0.0; n], vec![0.0; n])?;
    let c = state.gamma_bar() / state.denominator()?;
    let aj = state.a_matrix() * state.j_matrix();
    Ok(DMatrix::identity(n, n) + aj * c)
}

/// `Ŷ¹ = γ̄/(1-γ̄θ) a 1ᵀ J v + 2ã + γ̄ J b`.
pub fn y1_vector(state: &MatrixState) -> Result<Vec<f64>> {
    let p = price_general(state)?;
    let gb = state.gamma_bar();
    Ok((0..state.n())
        .map(|i| state.a[i] * p + 2.0 * state.a_tilde[i] + gb * state.b[i] / state.gammas[i])
        .collect())
}

/// `P̂ = γ̄/(1-γ̄θ) 1ᵀ J v`.
pub fn price_general(state: &MatrixState) -> Result<f64> {
    let c = state.gamma_bar() / state.denominator()?;
    let v = state.driver();
    Ok(c * v.iter().zip(&state.gammas).map(|(v, g)| v / g).sum::<f64>())
}

/// Inventory drift `½ J (I - γ̄/(1-γ̄θ)(1_{N×N} - A) J) v`, evaluated with
/// explicit matrices.
pub fn x_drift_general(state: &MatrixState) -> Result<Vec<f64>> {
    let n = state.n();
    let c = state.gamma_bar() / state.denominator()?;
    let j = state.j_matrix();
    let ones = DMatrix::from_element(n, n, 1.0);
    let inner = DMatrix::identity(n, n) - (ones - state.a_matrix()) * &j * c;
    let v = DVector::from_vec(state.driver());
    let drift = (j * inner * v) * 0.5;
    Ok(drift.iter().copied().collect())
}

/// Rate `q̂_i = (1-a_i)/(2γ_i) [(2Δ_i + (γ̄/γ_i) b_i)/(1-a_i) - P̂]`; needs `μ ≡ 0`.
pub fn rate_general(state: &MatrixState, agent: usize) -> Result<f64> {
    if agent >= state.n() {
        return Err(Error::Dimension {
            expected: state.n(),
            got: agent,
        });
    }
    if state.a_tilde.iter().any(|&x| x != 0.0) {
        return Err(Error::Precondition("rate formula requires zero drift"));
    }
    let one_minus_a = 1.0 - state.a[agent];
    if !(one_minus_a > 0.0) {
        return Err(Error::DegenerateRate {
            agent,
            value: one_minus_a,
        });
    }
    let p = price_general(state)?;
    let g = state.gammas[agent];
    let inner = (2.0 * state.delta[agent] + state.gamma_bar() / g * state.b[agent]) / one_minus_a - p;
    Ok(one_minus_a / (2.0 * g) * inner)
}

/// All rates `(v_i - (1 - a_i) P̂) / (2γ_i)` for any drift.
pub fn rates_general(state: &MatrixState) -> Result<(f64, Vec<f64>)> {
    let p = price_general(state)?;
    let v = state.driver();
    let q = (0..state.n())
        .map(|i| (v[i] - (1.0 - state.a[i]) * p) / (2.0 * state.gammas[i]))
        .collect();
    Ok((p, q))
}

/// Price with the coupling term dropped, accurate to `O(1/N)`.
pub fn large_n_price(
    scenario: &MarketScenario,
    tables: &[RiccatiTable],
    states: &[usize],
    t: f64,
    demands: &[f64],
    inventories: &[f64],
) -> Result<f64> {
    price_general(&MatrixState::from_market(scenario, tables, states, t, demands, inventories)?)
}

/// Two agents where only the second one can change production state and
/// demand forecasts are perfect.
#[derive(Clone, Debug)]
pub struct TwoAgentModel<'a> {
    scenario: &'a MarketScenario,
    tables: &'a [RiccatiTable],
}

/// Price, agent-1 rate and `ℓ` at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoAgentPoint {
    pub ell: f64,
    pub price: f64,
    pub q1: f64,
}

impl<'a> TwoAgentModel<'a> {
    pub fn new(scenario: &'a MarketScenario, tables: &'a [RiccatiTable]) -> Result<Self> {
        scenario.validate()?;
        if scenario.n_agents() != 2 {
            return Err(Error::Precondition("two-agent model needs exactly two agents"));
        }
        ensure_len(2, tables.len())?;
        if scenario.agents[0].has_active_jumps() {
            return Err(Error::Precondition("agent 1 must have a constant production state"));
        }
        if !scenario.is_deterministic() {
            return Err(Error::Precondition("two-agent model needs perfect demand forecasts"));
        }
        Ok(Self { scenario, tables })
    }

    pub fn scenario(&self) -> &MarketScenario {
        self.scenario
    }

    pub fn demand(&self, agent: usize, t: f64) -> f64 {
        let a = &self.scenario.agents[agent];
        a.d0 + a.mu * t
    }

    fn coefficients(&self, t: f64, state2: usize) -> Result<[f64; 4]> {
        let a1s = &self.scenario.agents[0];
        let y1 = self.tables[0].y2_smooth(a1s.initial_state, t)?;
        let y2 = self.tables[1].y2_smooth(state2, t)?;
        let tau = (self.scenario.horizon - t).max(0.0);
        Ok([y1, y2, tau * y1 / a1s.gamma, tau * y2 / self.scenario.agents[1].gamma])
    }

    /// `ℓ(t, x)` with agent 2 in production state `state2`.
    pub fn ell(&self, t: f64, x: f64, state2: usize) -> Result<f64> {
        check_time(t, self.scenario.horizon)?;
        let [y1, y2, a1, a2] = self.coefficients(t, state2)?;
        let (p1, p2) = (&self.scenario.agents[0], &self.scenario.agents[1]);
        let (g1, g2) = (p1.gamma, p2.gamma);
        let gb = 1.0 / (1.0 / g1 + 1.0 / g2);
        let denom = 1.0 - gb / g1 * a1 - gb / g2 * a2;
        if !(denom > INVERSE_TOL) {
            return Err(Error::DegenerateInverse { value: denom });
        }
        let term1 = (2.0 * y1 * (self.demand(0, t) - x) + 2.0 * p1.mu * g1 * a1) / g1;
        let term2 = (2.0 * y2 * (self.demand(1, t) - p2.x0 - p1.x0 + x) + 2.0 * p2.mu * g2 * a2) / g2;
        Ok(gb / denom * (term1 + term2) * a1 + 2.0 * p1.mu * g1 * a1)
    }

    /// `∂ℓ/∂x`.
    pub fn ell_slope(&self, t: f64, state2: usize) -> Result<f64> {
        let [y1, y2, a1, a2] = self.coefficients(t, state2)?;
        let (g1, g2) = (self.scenario.agents[0].gamma, self.scenario.agents[1].gamma);
        let gb = 1.0 / (1.0 / g1 + 1.0 / g2);
        let theta = a1 / g1 + a2 / g2;
        Ok(gb * a1 / (1.0 - gb * theta) * (-2.0 * y1 / g1 + 2.0 * y2 / g2))
    }

    /// Equilibrium at `(t, X¹ = x)` with agent 2 in `state2`.
    pub fn point(&self, t: f64, x: f64, state2: usize) -> Result<TwoAgentPoint> {
        let ell = self.ell(t, x, state2)?;
        let [y1, _, a1, _] = self.coefficients(t, state2)?;
        let p1 = &self.scenario.agents[0];
        let price = if a1 >= A_GUARD {
            ell / a1 - 2.0 * p1.mu * p1.gamma
        } else {
            let x2 = p1.x0 + self.scenario.agents[1].x0 - x;
            let states = [p1.initial_state, state2];
            large_n_price(
                self.scenario,
                self.tables,
                &states,
                t,
                &[self.demand(0, t), self.demand(1, t)],
                &[x, x2],
            )?
        };
        let q1 = (2.0 * y1 * (self.demand(0, t) - x) + ell - price) / (2.0 * p1.gamma);
        Ok(TwoAgentPoint { ell, price, q1 })
    }
}

/// Price and agent-2 rate on both sides of a production jump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub price_before: f64,
    pub price_after: f64,
    pub q2_before: f64,
    pub q2_after: f64,
}

/// Two-agent trajectory on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoAgentPath {
    pub times: Vec<f64>,
    pub state2: Vec<usize>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub price: Vec<f64>,
    pub q1: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
}

impl TwoAgentPath {
    pub fn q2(&self) -> Vec<f64> {
        self.q1.iter().map(|q| -q).collect()
    }
}

/// Integrates `dX¹/dt = q̂¹(t, X¹)` with RK4 between grid nodes, restarting
/// at the exact jump times of agent 2's chain.
pub fn two_agent_solve(model: &TwoAgentModel<'_>, chain: &ChainPath, grid: TimeGrid, substeps: usize) -> Result<TwoAgentPath> {
    let scenario = model.scenario();
    let x0_1 = scenario.agents[0].x0;
    let x_total = x0_1 + scenario.agents[1].x0;
    let rhs = |t: f64, x: f64, e: usize| -> Result<f64> { Ok(model.point(t, x, e)?.q1) };
    let substeps = substeps.max(1);

    let nodes = grid.len();
    let mut out = TwoAgentPath {
        times: Vec::with_capacity(nodes),
        state2: Vec::with_capacity(nodes),
        x1: Vec::with_capacity(nodes),
        x2: Vec::with_capacity(nodes),
        price: Vec::with_capacity(nodes),
        q1: Vec::with_capacity(nodes),
        jumps: Vec::new(),
    };
    let record = |out: &mut TwoAgentPath, t: f64, x: f64| -> Result<()> {
        let e = chain.state_at(t);
        let p = model.point(t, x, e)?;
        out.times.push(t);
        out.state2.push(e);
        out.x1.push(x);
        out.x2.push(x_total - x);
        out.price.push(p.price);
        out.q1.push(p.q1);
        Ok(())
    };

    let mut x = x0_1;
    record(&mut out, 0.0, x)?;
    for k in 0..grid.steps() {
        let (t_lo, t_hi) = (grid.point(k), grid.point(k + 1));
        let mut cuts: Vec<f64> = chain
            .jumps
            .iter()
            .map(|j| j.0)
            .filter(|&s| s > t_lo && s < t_hi)
            .collect();
        cuts.push(t_hi);
        let mut t = t_lo;
        for &cut in &cuts {
            let e = chain.state_at(t);
            let h = (cut - t) / substeps as f64;
            for m in 0..substeps {
                let s = t + m as f64 * h;
                let k1 = rhs(s, x, e)?;
                let k2 = rhs(s + 0.5 * h, x + 0.5 * h * k1, e)?;
                let k3 = rhs(s + 0.5 * h, x + 0.5 * h * k2, e)?;
                let k4 = rhs((s + h).min(cut), x + h * k3, e)?;
                x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            if !x.is_finite() {
                return Err(Error::NonFinite("two-agent inventory"));
            }
            t = cut;
            if let Some(&(_, to)) = chain.jumps.iter().find(|j| j.0 == cut) {
                let from = chain.state_before(cut);
                let before = model.point(cut, x, from)?;
                let after = model.point(cut, x, to)?;
                out.jumps.push(JumpEvent {
                    time: cut,
                    from,
                    to,
                    price_before: before.price,
                    price_after: after.price,
                    q2_before: -before.q1,
                    q2_after: -after.q1,
                });
            }
        }
        record(&mut out, t_hi, x)?;
    }
    if let Some(&(s, to)) = chain.jumps.iter().find(|j| j.0 <= 0.0) {
        let from = chain.initial;
        let before = model.point(0.0, x0_1, from)?;
        let after = model.point(0.0, x0_1, to)?;
        out.jumps.insert(
            0,
            JumpEvent {
                time: s.max(0.0),
                from,
                to,
                price_before: before.price,
                price_after: after.price,
                q2_before: -before.q1,
                q2_after: -after.q1,
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AgentSpec;
    use crate::nojump;
    use crate::riccati::solve_riccati;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tables(s: &MarketScenario) -> Vec<RiccatiTable> {
        s.agents
            .iter()
            .enumerate()
            .map(|(i, a)| solve_riccati(a, i, s.grid()).unwrap())
            .collect()
    }

    fn unit_pair() -> MarketScenario {
        let a = AgentSpec::single_state(1.0, 2.0, 2.0);
        MarketScenario::new(1.0, 200, vec![a.clone().with_positions(10.0, 0.0), a]).unwrap()
    }

    fn outage_pair(lambda: f64) -> MarketScenario {
        let a1 = AgentSpec::single_state(1.0, 30.0, 5.0).with_positions(10.0, 0.0);
        let a2 = AgentSpec::outage(1.0, 30.0, 0.1, 10.0, lambda).with_positions(10.0, 0.0);
        MarketScenario::new(4.0, 400, vec![a1, a2]).unwrap()
    }

    #[test]
    fn rank_one_inverse_examples() {
        let id = invert_rank_one(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(id, DMatrix::identity(3, 3));
        let m = invert_rank_one(&[1.0 / 3.0, 1.0 / 3.0], &[1.0, 1.0]).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.25, 0.25, 0.25, 1.25]);
        assert!((m - expect).abs().max() < 1e-14);
        assert!(matches!(invert_rank_one(&[1.0, 1.0], &[1.0, 1.0]), Err(Error::DegenerateInverse { .. })));
    }

    #[test]
    fn two_agent_no_jump_example() {
        let s = unit_pair();
        let t = tables(&s);
        let st = MatrixState::from_market(&s, &t, &[0, 0], 0.0, &[10.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(st.a[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(price_general(&st).unwrap(), 5.0, epsilon = 1e-10);
        let y1 = y1_vector(&st).unwrap();
        assert_relative_eq!(y1[0], 5.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(y1[1], 5.0 / 3.0, epsilon = 1e-10);
        let d = x_drift_general(&st).unwrap();
        assert_relative_eq!(d[0], 5.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(d[1], -5.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(rate_general(&st, 0).unwrap(), 5.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn zero_inputs_give_zero_outputs() {
        let st = MatrixState::new(vec![1.0, 2.0], vec![0.2, 0.3], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]).unwrap();
        assert_eq!(price_general(&st).unwrap(), 0.0);
        assert!(y1_vector(&st).unwrap().iter().all(|&v| v == 0.0));
        assert!(x_drift_general(&st).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn homogeneous_gamma_trace_form() {
        let g = 0.7;
        let a = vec![0.1, 0.25, 0.05, 0.3];
        let delta = vec![1.0, -2.0, 0.5, 3.0];
        let at = vec![0.2, 0.0, -0.1, 0.05];
        let st = MatrixState::new(vec![g; 4], a.clone(), delta.clone(), at.clone(), vec![0.0; 4]).unwrap();
        let tr: f64 = a.iter().sum();
        let sum: f64 = (0..4).map(|i| 2.0 * delta[i] + 2.0 * at[i]).sum();
        assert!((price_general(&st).unwrap() - sum / (4.0 - tr)).abs() < 1e-10);
        let d = 1.5;
        let eq = MatrixState::new(vec![g; 4], vec![0.2; 4], vec![d; 4], vec![0.0; 4], vec![0.0; 4]).unwrap();
        let gb = g / 4.0;
        let expect = 2.0 * d / (1.0 - gb * 0.8 / g) * gb * 4.0 / g;
        assert!((price_general(&eq).unwrap() - expect).abs() < 1e-10);
        let pi_form: f64 = (0..4).map(|_| 0.25 * 2.0 * d / 0.8).sum();
        assert!((price_general(&eq).unwrap() - pi_form).abs() < 1e-10);
    }

    #[test]
    fn rate_general_rejects_drift_and_bad_a() {
        let st = MatrixState::new(vec![1.0, 1.0], vec![0.2, 0.2], vec![1.0, 0.0], vec![0.1, 0.0], vec![0.0; 2]).unwrap();
        assert!(matches!(rate_general(&st, 0), Err(Error::Precondition(_))));
        let st = MatrixState::new(vec![1.0, 10.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0; 2], vec![0.0; 2]).unwrap();
        assert!(matches!(rate_general(&st, 0), Err(Error::DegenerateRate { .. })));
    }

    #[test]
    fn matches_nojump_closed_form() {
        let a = AgentSpec::single_state(0.5, 3.0, 4.0).with_positions(2.0, 0.5);
        let b = AgentSpec::single_state(2.0, 6.0, 1.5).with_positions(-1.0, 0.0);
        let c = AgentSpec::single_state(1.2, 1.0, 8.0).with_positions(4.0, 1.0);
        let s = MarketScenario::new(2.0, 100, vec![a, b, c]).unwrap();
        let t = tables(&s);
        let w = nojump::compute_weights(&s, &t).unwrap();
        let d = [3.0, 1.0, -2.0];
        let x = [0.5, -0.5, 1.0];
        for k in [0, 17, 50, 99, 100] {
            let tk = s.grid().point(k);
            let st = MatrixState::from_market(&s, &t, &[0, 0, 0], tk, &d, &x).unwrap();
            let c = nojump::marginal_costs(&w, &d, &x).unwrap();
            let (p, q) = nojump::equilibrium_at(&w, &c, tk).unwrap();
            assert!((price_general(&st).unwrap() - p).abs() < 1e-9 * (1.0 + p.abs()));
            for i in 0..3 {
                assert!((rate_general(&st, i).unwrap() - q[i]).abs() < 1e-9 * (1.0 + q[i].abs()));
            }
        }
    }

    #[test]
    fn ell_is_linear_and_reduces_without_jumps() {
        let s = outage_pair(0.0);
        let t = tables(&s);
        let m = TwoAgentModel::new(&s, &t).unwrap();
        for &tt in &[0.0, 1.3, 3.9] {
            let slope = m.ell_slope(tt, 0).unwrap();
            let fd = (m.ell(tt, 2.0, 0).unwrap() - m.ell(tt, -1.0, 0).unwrap()) / 3.0;
            assert!((slope - fd).abs() < 1e-10 * (1.0 + slope.abs()));
            let x = 0.7;
            let st = MatrixState::from_market(&s, &t, &[0, 0], tt, &[10.0, 10.0], &[x, -x]).unwrap();
            let p = price_general(&st).unwrap();
            assert!((m.ell(tt, x, 0).unwrap() - st.a[0] * p).abs() < 1e-10 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn drift_enters_two_agent_price_consistently() {
        let a1 = AgentSpec::single_state(0.8, 30.0, 5.0).with_positions(10.0, 1.0).with_forecast(0.7, 0.0, 0.0, 0.0);
        let a2 = AgentSpec::outage(1.3, 30.0, 0.1, 10.0, 0.3).with_positions(4.0, -2.0).with_forecast(-0.4, 0.0, 0.0, 0.0);
        let s = MarketScenario::new(3.0, 300, vec![a1, a2]).unwrap();
        let t = tables(&s);
        let m = TwoAgentModel::new(&s, &t).unwrap();
        for &(tt, e) in &[(0.0, 0), (1.0, 1), (2.5, 0)] {
            let x = 0.4;
            let d = [m.demand(0, tt), m.demand(1, tt)];
            let st = MatrixState::from_market(&s, &t, &[0, e], tt, &d, &[x, -1.0 - x]).unwrap();
            let (p, q) = rates_general(&st).unwrap();
            let pt = m.point(tt, x, e).unwrap();
            assert!((pt.price - p).abs() < 1e-9 * (1.0 + p.abs()));
            assert!((pt.q1 - q[0]).abs() < 1e-9 * (1.0 + q[0].abs()));
            let y1 = y1_vector(&st).unwrap();
            assert!((pt.ell - y1[0]).abs() < 1e-9 * (1.0 + y1[0].abs()));
        }
    }

    #[test]
    fn two_agent_solver_without_jump_matches_closed_form() {
        let a = AgentSpec::single_state(1.0, 2.0, 2.0);
        let s = MarketScenario::new(1.0, 100, vec![a.clone().with_positions(10.0, 0.0), a]).unwrap();
        let t = tables(&s);
        let m = TwoAgentModel::new(&s, &t).unwrap();
        let path = two_agent_solve(&m, &ChainPath::constant(0), s.grid(), 4).unwrap();
        for k in 0..=100 {
            assert!((path.price[k] - 5.0).abs() < 1e-6);
            assert!((path.q1[k] - 5.0 / 3.0).abs() < 1e-6, "{k} {}", path.q1[k] - 5.0 / 3.0);
            assert!((path.x1[k] + path.x2[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn price_jumps_up_at_outage() {
        let s = outage_pair(0.2);
        let t = tables(&s);
        let m = TwoAgentModel::new(&s, &t).unwrap();
        let chain = ChainPath {
            initial: 0,
            jumps: vec![(1.234, 1)],
        };
        let path = two_agent_solve(&m, &chain, s.grid(), 2).unwrap();
        assert_eq!(path.jumps.len(), 1);
        let j = path.jumps[0];
        assert!(j.price_after > j.price_before);
        assert!(j.q2_before < 0.0 && j.q2_after > j.q2_before);
        let k = s.grid().locate(1.234).unwrap().0;
        assert!(path.price[k + 1] > path.price[k]);
    }

    #[test]
    fn preconditions_are_enforced() {
        let s = outage_pair(0.2);
        let t = tables(&s);
        let mut noisy = s.clone();
        noisy.agents[1].sigma_sq = 0.5;
        assert!(TwoAgentModel::new(&noisy, &t).is_err());
        let swapped = MarketScenario::new(4.0, 400, vec![s.agents[1].clone(), s.agents[0].clone()]).unwrap();
        assert!(TwoAgentModel::new(&swapped, &t).is_err());
    }

    fn dense_inverse(a: &[f64], g: &[f64]) -> DMatrix<f64> {
        let n = a.len();
        let gb = 1.0 / g.iter().map(|x| 1.0 / x).sum::<f64>();
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - gb * a[i] / g[j]);
        m.lu().try_inverse().unwrap()
    }

    fn arb_state() -> impl Strategy<Value = MatrixState> {
        (1usize..7).prop_flat_map(|n| {
            (
                prop::collection::vec(0.01..100.0f64, n),
                prop::collection::vec(0.0..0.999f64, n),
                prop::collection::vec(-50.0..50.0f64, n),
                prop::collection::vec(-5.0..5.0f64, n),
                prop::collection::vec(-5.0..5.0f64, n),
            )
                .prop_map(|(g, a, d, at, b)| MatrixState::new(g, a, d, at, b).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rank_one_inverse_identity(st in arb_state()) {
            let n = st.n();
            let inv = invert_rank_one(&st.a, &st.gammas).unwrap();
            let aj = st.a_matrix() * st.j_matrix();
            let prod = (DMatrix::identity(n, n) - &aj * st.gamma_bar()) * &inv;
            prop_assert!((prod - DMatrix::identity(n, n)).abs().max() < 1e-10);
            let sq = &aj * &aj - &aj * st.theta();
            prop_assert!(sq.abs().max() < 1e-10 * (1.0 + aj.abs().max()));
            let dense = dense_inverse(&st.a, &st.gammas);
            prop_assert!((inv - dense).abs().max() < 1e-8);
        }

        #[test]
        fn consistency_triangle_and_clearing(st in arb_state()) {
            let p = price_general(&st).unwrap();
            let y1 = y1_vector(&st).unwrap();
            let drift = x_drift_general(&st).unwrap();
            let scale = 1.0 + drift.iter().fold(0.0f64, |m, v| m.max(v.abs())) + p.abs();
            for i in 0..st.n() {
                let rate = (2.0 * st.delta[i] + y1[i] - p) / (2.0 * st.gammas[i]);
                prop_assert!((rate - drift[i]).abs() < 1e-10 * scale);
            }
            prop_assert!(drift.iter().sum::<f64>().abs() < 1e-10 * scale);
        }

        #[test]
        fn normalized_rate_matches_drift(mut st in arb_state()) {
            st.a_tilde.iter_mut().for_each(|x| *x = 0.0);
            let drift = x_drift_general(&st).unwrap();
            let scale = 1.0 + drift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..st.n() {
                prop_assert!((rate_general(&st, i).unwrap() - drift[i]).abs() < 1e-10 * scale);
            }
        }
    }
}
