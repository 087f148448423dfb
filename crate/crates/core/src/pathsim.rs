//! Monte Carlo paths of demands, production states, inventories, rates and
//! prices under the equilibrium feedback.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Exp1, StandardNormal, StandardUniform};

use crate::error::{Error, Result};
use crate::jump::{rates_general, MatrixState, TwoAgentModel};
use crate::model::{AgentSpec, ChainPath, MarketScenario, TimeGrid};
use crate::nojump::{self, WeightCurves};
use crate::riccati::{solve_riccati, RiccatiTable};

/// Deterministic per-path, per-stream generators derived from one seed.
///
/// Streams: `0` common noise, `1..=N` idiosyncratic noise, `N+1..=2N`
/// production chains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngPlan {
    pub master_seed: u64,
    pub n_agents: usize,
}

impl RngPlan {
    pub fn new(master_seed: u64, n_agents: usize) -> Self {
        Self {
            master_seed,
            n_agents,
        }
    }

    pub fn streams_per_path(&self) -> u64 {
        2 * self.n_agents as u64 + 1
    }

    pub fn stream_id(&self, path: u64, stream: u64) -> u64 {
        path * self.streams_per_path() + stream
    }

    pub fn rng(&self, path: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id(path, stream));
        rng
    }

    pub fn common(&self, path: u64) -> ChaCha8Rng {
        self.rng(path, 0)
    }

    pub fn idiosyncratic(&self, path: u64, agent: usize) -> ChaCha8Rng {
        self.rng(path, 1 + agent as u64)
    }

    pub fn chain(&self, path: u64, agent: usize) -> ChaCha8Rng {
        self.rng(path, 1 + (self.n_agents + agent) as u64)
    }
}

/// Demands of every agent on the grid plus the common Brownian increments.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandPath {
    /// `values[i][k]`.
    pub values: Vec<Vec<f64>>,
    /// `ΔW⁰_k`, `k = 0..K`.
    pub common_increments: Vec<f64>,
}

fn normal<R: rand_core::Rng + ?Sized>(rng: &mut R) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

pub fn simulate_demand_path(scenario: &MarketScenario, plan: &RngPlan, path: u64) -> DemandPath {
    let grid = scenario.grid();
    let (k_steps, dt) = (grid.steps(), grid.dt());
    let sqrt_dt = libm::sqrt(dt);
    let mut common = plan.common(path);
    let common_increments: Vec<f64> = (0..k_steps)
        .map(|_| sqrt_dt * normal(&mut common))
        .collect();
    let values = scenario
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut out = Vec::with_capacity(k_steps + 1);
            out.push(a.d0);
            if a.is_deterministic() {
                out.extend((1..=k_steps).map(|k| a.d0 + a.mu * grid.point(k)));
                return out;
            }
            let mut rng = plan.idiosyncratic(path, i);
            let idio_w = libm::sqrt((1.0 - a.rho * a.rho).max(0.0));
            let mut d = a.d0;
            for (k, dw0) in common_increments.iter().enumerate() {
                let dwi = sqrt_dt * normal(&mut rng);
                let sigma = libm::sqrt((a.sigma_sq * (grid.horizon() - grid.point(k)) + a.sigma0_sq).max(0.0));
                d += a.mu * dt + sigma * (a.rho * dw0 + idio_w * dwi);
                out.push(d);
            }
            out
        })
        .collect();
    DemandPath {
        values,
        common_increments,
    }
}

pub fn simulate_demands(scenario: &MarketScenario, plan: &RngPlan, paths: usize) -> Vec<DemandPath> {
    (0..paths as u64)
        .map(|p| simulate_demand_path(scenario, plan, p))
        .collect()
}

/// Continuous-time chain path on `[0, horizon]`.
pub fn simulate_chain<R: rand_core::Rng + ?Sized>(agent: &AgentSpec, horizon: f64, rng: &mut R) -> ChainPath {
    let mut path = ChainPath::constant(agent.initial_state);
    let mut state = agent.initial_state;
    let mut t = 0.0;
    loop {
        let rate = -agent.intensity[state][state];
        if !(rate > 0.0) {
            break;
        }
        let hold: f64 = Exp1.sample(rng);
        t += hold / rate;
        if t > horizon {
            break;
        }
        let u: f64 = StandardUniform.sample(rng);
        let target = u * rate;
        let mut acc = 0.0;
        let mut next = state;
        for (e, &l) in agent.intensity[state].iter().enumerate() {
            if e == state || l <= 0.0 {
                continue;
            }
            acc += l;
            next = e;
            if target < acc {
                break;
            }
        }
        state = next;
        path.jumps.push((t, state));
    }
    path
}

pub fn simulate_chain_paths(scenario: &MarketScenario, plan: &RngPlan, path: u64) -> Vec<ChainPath> {
    scenario
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut rng = plan.chain(path, i);
            simulate_chain(a, scenario.horizon, &mut rng)
        })
        .collect()
}

pub fn simulate_chains(scenario: &MarketScenario, plan: &RngPlan, paths: usize) -> Vec<Vec<ChainPath>> {
    (0..paths as u64)
        .map(|p| simulate_chain_paths(scenario, plan, p))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SimMode {
    NoJumpClosedForm,
    TwoAgentJump,
    LargeNApprox,
}

impl SimMode {
    pub const ALL: [SimMode; 3] = [SimMode::NoJumpClosedForm, SimMode::TwoAgentJump, SimMode::LargeNApprox];

    pub fn name(self) -> &'static str {
        match self {
            SimMode::NoJumpClosedForm => "nojump-closed-form",
            SimMode::TwoAgentJump => "two-agent-jump",
            SimMode::LargeNApprox => "large-n-approx",
        }
    }
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SimMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or(Error::Precondition("unknown simulation mode"))
    }
}

/// Synthetic violations used to check the power of the statistical tests.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fault {
    /// Adds `rate * t` to the recorded price and to every recorded rate.
    Drift(f64),
    /// Adds a constant to agent 0's recorded rate.
    Clearing(f64),
}

/// One simulated trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedPath {
    pub index: u64,
    pub demands: Vec<Vec<f64>>,
    pub states: Vec<Vec<usize>>,
    pub chains: Vec<ChainPath>,
    pub inventories: Vec<Vec<f64>>,
    pub rates: Vec<Vec<f64>>,
    pub price: Vec<f64>,
    pub common_increments: Vec<f64>,
}

impl SimulatedPath {
    pub fn n_agents(&self) -> usize {
        self.rates.len()
    }

    pub fn nodes(&self) -> usize {
        self.price.len()
    }

    /// Largest `|Σ_i q_i[k]|` over nodes.
    pub fn clearing_residual(&self) -> f64 {
        (0..self.nodes())
            .map(|k| self.rates.iter().map(|q| q[k]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

enum Engine<'a> {
    NoJump(WeightCurves),
    TwoAgent(TwoAgentModel<'a>),
    LargeN,
}

/// Equilibrium feedback simulator for one scenario and mode.
pub struct Simulator<'a> {
    scenario: &'a MarketScenario,
    tables: &'a [RiccatiTable],
    mode: SimMode,
    engine: Engine<'a>,
    fault: Option<Fault>,
}

/// Riccati tables for every agent of a scenario.
pub fn solve_tables(scenario: &MarketScenario) -> Result<Vec<RiccatiTable>> {
    scenario
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| solve_riccati(a, i, scenario.grid()))
        .collect()
}

impl<'a> Simulator<'a> {
    pub fn new(scenario: &'a MarketScenario, tables: &'a [RiccatiTable], mode: SimMode) -> Result<Self> {
        scenario.validate()?;
        crate::error::ensure_len(scenario.n_agents(), tables.len())?;
        let engine = match mode {
            SimMode::NoJumpClosedForm => Engine::NoJump(nojump::compute_weights(scenario, tables)?),
            SimMode::TwoAgentJump => Engine::TwoAgent(TwoAgentModel::new(scenario, tables)?),
            SimMode::LargeNApprox => Engine::LargeN,
        };
        Ok(Self {
            scenario,
            tables,
            mode,
            engine,
            fault: None,
        })
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn mode(&self) -> SimMode {
        self.mode
    }

    pub fn scenario(&self) -> &MarketScenario {
        self.scenario
    }

    pub fn grid(&self) -> TimeGrid {
        self.scenario.grid()
    }

    /// Price and rates at one node.
    pub fn feedback(&self, t: f64, demands: &[f64], inventories: &[f64], states: &[usize]) -> Result<(f64, Vec<f64>)> {
        match &self.engine {
            Engine::NoJump(w) => {
                let c = nojump::marginal_costs(w, demands, inventories)?;
                nojump::equilibrium_at(w, &c, t)
            }
            Engine::TwoAgent(m) => {
                let p = m.point(t, inventories[0], states[1])?;
                Ok((p.price, vec![p.q1, -p.q1]))
            }
            Engine::LargeN => rates_general(&MatrixState::from_market(
                self.scenario,
                self.tables,
                states,
                t,
                demands,
                inventories,
            )?),
        }
    }

    /// Simulates path number `index` from its own RNG streams.
    pub fn simulate_path(&self, plan: &RngPlan, index: u64) -> Result<SimulatedPath> {
        let demand = simulate_demand_path(self.scenario, plan, index);
        let chains = simulate_chain_paths(self.scenario, plan, index);
        self.run(index, demand, chains)
    }

    /// Runs the feedback on given demand and chain paths.
    pub fn run(&self, index: u64, demand: DemandPath, chains: Vec<ChainPath>) -> Result<SimulatedPath> {
        let grid = self.grid();
        let n = self.scenario.n_agents();
        let nodes = grid.len();
        let dt = grid.dt();
        let states: Vec<Vec<usize>> = chains.iter().map(|c| c.on_grid(&grid)).collect();
        let mut inventories = vec![Vec::with_capacity(nodes); n];
        let mut rates = vec![Vec::with_capacity(nodes); n];
        let mut price = Vec::with_capacity(nodes);
        let mut x: Vec<f64> = self.scenario.agents.iter().map(|a| a.x0).collect();
        let mut d = vec![0.0; n];
        let mut s = vec![0usize; n];
        for k in 0..nodes {
            let t = grid.point(k);
            for i in 0..n {
                d[i] = demand.values[i][k];
                s[i] = states[i][k];
                inventories[i].push(x[i]);
            }
            let (p, q) = self.feedback(t, &d, &x, &s)?;
            if !p.is_finite() || q.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("simulated price or rate"));
            }
            for i in 0..n {
                x[i] += q[i] * dt;
                rates[i].push(q[i]);
            }
            price.push(p);
        }
        match self.fault {
            Some(Fault::Drift(rate)) => {
                for (k, t) in grid.points().enumerate() {
                    price[k] += rate * t;
                    for r in rates.iter_mut() {
                        r[k] += rate * t;
                    }
                }
            }
            Some(Fault::Clearing(c)) => rates[0].iter_mut().for_each(|q| *q += c),
            None => {}
        }
        Ok(SimulatedPath {
            index,
            demands: demand.values,
            states,
            chains,
            inventories,
            rates,
            price,
            common_increments: demand.common_increments,
        })
    }
}

/// Sequential ensemble; the std companion crate runs the same paths in
/// parallel.
pub fn simulate_equilibrium(scenario: &MarketScenario, plan: &RngPlan, paths: usize, mode: SimMode) -> Result<Vec<SimulatedPath>> {
    let tables = solve_tables(scenario)?;
    let sim = Simulator::new(scenario, &tables, mode)?;
    (0..paths as u64).map(|p| sim.simulate_path(plan, p)).collect()
}

/// Indicator perturbation `δ · 1{t ∈ [start, end)}` of one agent's rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub start: f64,
    pub end: f64,
    pub delta: f64,
}

impl Bump {
    pub fn value(&self, t: f64) -> f64 {
        if t >= self.start && t < self.end {
            self.delta
        } else {
            0.0
        }
    }
}

/// Pathwise cost `∫ q (P + γ q) dt + ½ ε(β_T) (D_T - X_T)²`, the integral by
/// the trapezoid rule on the grid and `X` by the Euler sums of `q`.
pub fn path_cost(agent: &AgentSpec, grid: &TimeGrid, rates: &[f64], price: &[f64], terminal_demand: f64, terminal_state: usize) -> Result<f64> {
    let nodes = grid.len();
    crate::error::ensure_len(nodes, rates.len())?;
    crate::error::ensure_len(nodes, price.len())?;
    let dt = grid.dt();
    let running = |k: usize| rates[k] * (price[k] + agent.gamma * rates[k]);
    let mut integral = 0.0;
    let mut x = agent.x0;
    for k in 0..nodes - 1 {
        integral += 0.5 * dt * (running(k) + running(k + 1));
        x += rates[k] * dt;
    }
    let r = terminal_demand - x;
    Ok(integral + 0.5 * agent.effective_cost(terminal_state)? * r * r)
}

/// Cost of agent `agent` on one simulated path, optionally with its rate
/// perturbed while the price path is held fixed.
pub fn perturbed_cost(scenario: &MarketScenario, agent: usize, path: &SimulatedPath, bump: Option<&Bump>) -> Result<f64> {
    let grid = scenario.grid();
    let spec = scenario.agents.get(agent).ok_or(Error::Dimension {
        expected: scenario.n_agents(),
        got: agent,
    })?;
    let last = grid.steps();
    let rates: Vec<f64> = match bump {
        None => path.rates[agent].clone(),
        Some(b) => grid
            .points()
            .zip(&path.rates[agent])
            .map(|(t, q)| q + b.value(t))
            .collect(),
    };
    path_cost(spec, &grid, &rates, &path.price, path.demands[agent][last], path.states[agent][last])
}

/// Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub se: f64,
    pub paths: usize,
}

impl CostEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let m = samples.len();
        let mean = samples.iter().sum::<f64>() / m as f64;
        let var = if m > 1 {
            samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            se: libm::sqrt(var / m as f64),
            paths: m,
        }
    }
}

/// Monte Carlo estimate of `J_i` over simulated paths.
pub fn evaluate_cost(scenario: &MarketScenario, agent: usize, paths: &[SimulatedPath], bump: Option<&Bump>) -> Result<CostEstimate> {
    if paths.is_empty() {
        return Err(Error::Empty("paths"));
    }
    let samples = paths
        .iter()
        .map(|p| perturbed_cost(scenario, agent, p, bump))
        .collect::<Result<Vec<_>>>()?;
    Ok(CostEstimate::from_samples(&samples))
}
