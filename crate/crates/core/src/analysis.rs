//! Ensemble statistics, martingale and volatility checks, and the parameter
//! sweeps behind the two numerical illustrations.
//!
//! The pooled martingale statistic standardises each node's mean increment,
//! `z_k = mean(ΔX_k) / se(ΔX_k)`, and combines the non-degenerate nodes as
//! `Σ_k z_k / √K'`, which is standard normal under the null.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::jump::TwoAgentModel;
use crate::model::{AgentSpec, MarketScenario};
use crate::nojump::{compute_weights, volatility_curve};
use crate::pathsim::SimulatedPath;
use crate::riccati::solve_riccati;

/// Relative tolerance of the monotonicity classifier.
pub const SHAPE_TOL: f64 = 1e-9;
/// Relative spread below which a node's increments count as constant.
pub const DEGENERATE_TOL: f64 = 1e-10;
pub const MIN_PATHS: usize = 100;

/// Running mean and centred second moment, mergeable in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count > 1 {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        } else {
            0.0
        }
    }

    pub fn sd(&self) -> f64 {
        libm::sqrt(self.variance())
    }

    pub fn se(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            libm::sqrt(self.variance() / self.count as f64)
        }
    }
}

/// Streaming per-node statistics of an ensemble; paths are not retained.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleAccumulator {
    dt: f64,
    times: Vec<f64>,
    dp: Vec<Moments>,
    dp_sq: Vec<Moments>,
    price: Vec<Moments>,
    dq: Vec<Vec<Moments>>,
    rate: Vec<Vec<Moments>>,
    clearing_max: f64,
    paths: u64,
}

impl EnsembleAccumulator {
    pub fn new(scenario: &MarketScenario) -> Self {
        let grid = scenario.grid();
        let (k, n) = (grid.steps(), scenario.n_agents());
        Self {
            dt: grid.dt(),
            times: grid.points().collect(),
            dp: vec![Moments::default(); k],
            dp_sq: vec![Moments::default(); k],
            price: vec![Moments::default(); k + 1],
            dq: vec![vec![Moments::default(); k]; n],
            rate: vec![vec![Moments::default(); k + 1]; n],
            clearing_max: 0.0,
            paths: 0,
        }
    }

    pub fn push(&mut self, path: &SimulatedPath) -> Result<()> {
        let nodes = self.times.len();
        if path.nodes() != nodes || path.n_agents() != self.dq.len() {
            return Err(Error::Dimension {
                expected: nodes,
                got: path.nodes(),
            });
        }
        for k in 0..nodes {
            self.price[k].push(path.price[k]);
            if k + 1 < nodes {
                let d = path.price[k + 1] - path.price[k];
                self.dp[k].push(d);
                self.dp_sq[k].push(d * d);
            }
        }
        for (i, q) in path.rates.iter().enumerate() {
            for k in 0..nodes {
                self.rate[i][k].push(q[k]);
                if k + 1 < nodes {
                    self.dq[i][k].push(q[k + 1] - q[k]);
                }
            }
        }
        self.clearing_max = self.clearing_max.max(path.clearing_residual());
        self.paths += 1;
        Ok(())
    }

    /// Appends another accumulator; merging chunks in a fixed order gives
    /// bitwise-reproducible results.
    pub fn merge(&mut self, other: &EnsembleAccumulator) {
        let zip = |a: &mut [Moments], b: &[Moments]| a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y));
        zip(&mut self.dp, &other.dp);
        zip(&mut self.dp_sq, &other.dp_sq);
        zip(&mut self.price, &other.price);
        for (a, b) in self.dq.iter_mut().zip(&other.dq) {
            zip(a, b);
        }
        for (a, b) in self.rate.iter_mut().zip(&other.rate) {
            zip(a, b);
        }
        self.clearing_max = self.clearing_max.max(other.clearing_max);
        self.paths += other.paths;
    }

    pub fn paths(&self) -> u64 {
        self.paths
    }

    pub fn finish(&self) -> EnsembleStats {
        let dt = self.dt;
        EnsembleStats {
            times: self.times.clone(),
            dt,
            paths: self.paths,
            dp: self.dp.clone(),
            zeta_hat: self.dp_sq.iter().map(|m| m.mean / dt).collect(),
            zeta_se: self.dp_sq.iter().map(|m| m.se() / dt).collect(),
            price: self.price.clone(),
            dq: self.dq.clone(),
            rate: self.rate.clone(),
            clearing_max: self.clearing_max,
        }
    }
}

/// Per-node summary of an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub dt: f64,
    pub paths: u64,
    /// Price increments `P[k+1] - P[k]`.
    pub dp: Vec<Moments>,
    /// `mean(ΔP_k²) / Δt`.
    pub zeta_hat: Vec<f64>,
    pub zeta_se: Vec<f64>,
    pub price: Vec<Moments>,
    /// Rate increments per agent.
    pub dq: Vec<Vec<Moments>>,
    pub rate: Vec<Vec<Moments>>,
    /// Largest `|Σ_i q_i|` seen on any node of any path.
    pub clearing_max: f64,
}

impl EnsembleStats {
    pub fn from_paths(scenario: &MarketScenario, paths: &[SimulatedPath]) -> Result<Self> {
        let mut acc = EnsembleAccumulator::new(scenario);
        for p in paths {
            acc.push(p)?;
        }
        Ok(acc.finish())
    }
}

/// Martingale statistics of one series.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTest {
    pub node_z: Vec<Option<f64>>,
    pub pooled_z: Option<f64>,
    pub used_nodes: usize,
}

impl SeriesTest {
    /// All increments were constant; reported rather than failed.
    pub fn is_degenerate(&self) -> bool {
        self.pooled_z.is_none()
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.pooled_z.is_none_or(|z| z.abs() < threshold)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleReport {
    pub price: SeriesTest,
    pub rates: Vec<SeriesTest>,
}

impl MartingaleReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.price.passes(threshold) && self.rates.iter().all(|r| r.passes(threshold))
    }

    /// Largest pooled `|z|` across price and rates.
    pub fn max_abs_z(&self) -> f64 {
        core::iter::once(&self.price)
            .chain(&self.rates)
            .filter_map(|s| s.pooled_z)
            .fold(0.0, |m, z| m.max(z.abs()))
    }

    /// Smallest pooled `|z|` across price and rates.
    pub fn min_abs_z(&self) -> f64 {
        core::iter::once(&self.price)
            .chain(&self.rates)
            .filter_map(|s| s.pooled_z)
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

fn series_test(increments: &[Moments], levels: &[Moments]) -> SeriesTest {
    let mut sum = 0.0;
    let mut used = 0usize;
    let node_z = increments
        .iter()
        .zip(levels)
        .map(|(m, level)| {
            let scale = 1.0 + level.mean.abs();
            if m.sd() <= DEGENERATE_TOL * scale {
                return None;
            }
            let z = m.mean / m.se();
            sum += z;
            used += 1;
            Some(z)
        })
        .collect();
    let pooled_z = (used > 0).then(|| sum / libm::sqrt(used as f64));
    SeriesTest {
        node_z,
        pooled_z,
        used_nodes: used,
    }
}

pub fn martingale_test(stats: &EnsembleStats) -> Result<MartingaleReport> {
    if (stats.paths as usize) < MIN_PATHS {
        return Err(Error::Precondition("martingale test needs at least 100 paths"));
    }
    Ok(MartingaleReport {
        price: series_test(&stats.dp, &stats.price),
        rates: stats
            .dq
            .iter()
            .zip(&stats.rate)
            .map(|(d, l)| series_test(d, l))
            .collect(),
    })
}

/// Empirical `ζ̂²(t_k)` with a 95% band.
#[derive(Clone, Debug, PartialEq)]
pub struct VolatilityEstimate {
    pub times: Vec<f64>,
    pub zeta_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl VolatilityEstimate {
    /// Largest relative deviation from `analytic` over nodes with
    /// `t ≤ fraction · T`.
    pub fn max_relative_error(&self, analytic: &[f64], horizon: f64, fraction: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.zeta_hat)
            .zip(analytic)
            .filter(|((t, _), _)| **t <= fraction * horizon + 1e-12)
            .map(|((_, z), a)| {
                if *a == 0.0 {
                    if *z == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    (z - a).abs() / a.abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

pub fn realized_volatility(stats: &EnsembleStats) -> VolatilityEstimate {
    let k = stats.zeta_hat.len();
    let lower = (0..k).map(|i| stats.zeta_hat[i] - 1.96 * stats.zeta_se[i]).collect();
    let upper = (0..k).map(|i| stats.zeta_hat[i] + 1.96 * stats.zeta_se[i]).collect();
    VolatilityEstimate {
        times: stats.times[..k].to_vec(),
        zeta_hat: stats.zeta_hat.clone(),
        se: stats.zeta_se.clone(),
        lower,
        upper,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Monotonicity {
    Zero,
    Constant,
    Increasing,
    Decreasing,
    NonMonotone,
}

impl Monotonicity {
    pub fn name(self) -> &'static str {
        match self {
            Monotonicity::Zero => "zero",
            Monotonicity::Constant => "constant",
            Monotonicity::Increasing => "increasing",
            Monotonicity::Decreasing => "decreasing",
            Monotonicity::NonMonotone => "non-monotone",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurveShape {
    pub class: Monotonicity,
    /// Second differences are all non-positive and at least one is
    /// negative (up to tolerance), so straight lines are not concave.
    pub concave: bool,
}

impl CurveShape {
    pub fn label(&self) -> &'static str {
        match (self.class, self.concave) {
            (Monotonicity::Decreasing, true) => "decreasing-concave",
            (Monotonicity::Increasing, true) => "increasing-concave",
            (c, _) => c.name(),
        }
    }
}

pub fn classify(values: &[f64]) -> CurveShape {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return CurveShape {
            class: Monotonicity::Zero,
            concave: false,
        };
    }
    let tol = SHAPE_TOL * scale;
    let (mut up, mut down) = (false, false);
    for w in values.windows(2) {
        let d = w[1] - w[0];
        up |= d > tol;
        down |= d < -tol;
    }
    let class = match (up, down) {
        (false, false) => Monotonicity::Constant,
        (true, false) => Monotonicity::Increasing,
        (false, true) => Monotonicity::Decreasing,
        (true, true) => Monotonicity::NonMonotone,
    };
    let second = || values.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]);
    let concave = second().all(|d| d <= tol) && second().any(|d| d < -tol);
    CurveShape { class, concave }
}

pub fn strictly_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] > w[0])
}

pub fn sign_changes(values: &[f64]) -> usize {
    values
        .iter()
        .filter(|v| **v != 0.0)
        .collect::<Vec<_>>()
        .windows(2)
        .filter(|w| (*w[0] > 0.0) != (*w[1] > 0.0))
        .count()
}

/// One `ζ²` curve of the mixture sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCurve {
    pub alpha: f64,
    pub n_type1: usize,
    pub times: Vec<f64>,
    pub zeta_sq: Vec<f64>,
    pub shape: CurveShape,
}

/// Market with `n_type1` agents of the first type followed by the rest of
/// the second type.
pub fn mixture_market(type1: &AgentSpec, type2: &AgentSpec, n_type1: usize, n: usize, horizon: f64, steps: usize) -> Result<MarketScenario> {
    let agents = (0..n)
        .map(|i| if i < n_type1 { type1.clone() } else { type2.clone() })
        .collect();
    MarketScenario::new(horizon, steps, agents)
}

/// Analytic `ζ²` curves of type-1/type-2 mixtures for each `α`.
pub fn samuelson_sweep(type1: &AgentSpec, type2: &AgentSpec, alphas: &[f64], n: usize, horizon: f64, steps: usize) -> Result<Vec<SweepCurve>> {
    if alphas.is_empty() {
        return Err(Error::Empty("alphas"));
    }
    if n == 0 {
        return Err(Error::Empty("agents"));
    }
    let mut curves = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Precondition("alpha must lie in [0, 1]"));
        }
        let n_type1 = libm::round(alpha * n as f64) as usize;
        let market = mixture_market(type1, type2, n_type1, n, horizon, steps)?;
        let grid = market.grid();
        let t1 = solve_riccati(type1, 0, grid)?;
        let t2 = solve_riccati(type2, 0, grid)?;
        let tables: Vec<_> = (0..n)
            .map(|i| if i < n_type1 { t1.clone() } else { t2.clone() })
            .collect();
        let weights = compute_weights(&market, &tables)?;
        let curve = volatility_curve(&market, &weights)?;
        let shape = classify(&curve.zeta_sq);
        curves.push(SweepCurve {
            alpha,
            n_type1,
            times: curve.times,
            zeta_sq: curve.zeta_sq,
            shape,
        });
    }
    Ok(curves)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaRow {
    pub lambda: f64,
    pub p0: f64,
    pub q2_0: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSweep {
    pub rows: Vec<LambdaRow>,
    pub p0_increasing: bool,
    pub q2_increasing: bool,
    pub q2_sign_changes: usize,
}

/// Agent 2's two-state chain with switching rate `lambda` out of its
/// initial state.
pub fn with_switch_rate(scenario: &MarketScenario, lambda: f64) -> Result<MarketScenario> {
    let mut s = scenario.clone();
    let a2 = s
        .agents
        .get_mut(1)
        .ok_or(Error::Precondition("jump sweep needs two agents"))?;
    if a2.state_count() != 2 {
        return Err(Error::Precondition("agent 2 needs exactly two production states"));
    }
    let from = a2.initial_state;
    let to = 1 - from;
    a2.intensity = vec![vec![0.0; 2]; 2];
    a2.intensity[from][from] = -lambda;
    a2.intensity[from][to] = lambda;
    s.validate()?;
    Ok(s)
}

/// Time-0 price and agent-2 rate as functions of agent 2's switching rate.
pub fn lambda_sweep(scenario: &MarketScenario, lambdas: &[f64]) -> Result<LambdaSweep> {
    if lambdas.is_empty() {
        return Err(Error::Empty("lambdas"));
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let s = with_switch_rate(scenario, lambda)?;
        let tables = crate::pathsim::solve_tables(&s)?;
        let model = TwoAgentModel::new(&s, &tables)?;
        let pt = model.point(0.0, s.agents[0].x0, s.agents[1].initial_state)?;
        rows.push(LambdaRow {
            lambda,
            p0: pt.price,
            q2_0: -pt.q1,
        });
    }
    let p0: Vec<f64> = rows.iter().map(|r| r.p0).collect();
    let q2: Vec<f64> = rows.iter().map(|r| r.q2_0).collect();
    Ok(LambdaSweep {
        p0_increasing: strictly_increasing(&p0),
        q2_increasing: strictly_increasing(&q2),
        q2_sign_changes: sign_changes(&q2),
        rows,
    })
}
