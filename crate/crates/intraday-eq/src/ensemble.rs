//! Parallel Monte Carlo ensembles.
//!
//! Paths are split into fixed chunks of [`CHUNK`] consecutive indices. Each
//! chunk is reduced on its own and the partial results are merged in index
//! order, so the output does not depend on the number of worker threads.

use rayon::prelude::*;

use intraday_eq_core::analysis::{EnsembleAccumulator, EnsembleStats, Moments};
use intraday_eq_core::pathsim::{perturbed_cost, Bump, Fault, RngPlan, SimMode, SimulatedPath, Simulator};
use intraday_eq_core::riccati::RiccatiTable;
use intraday_eq_core::{MarketScenario, Result};

pub const CHUNK: usize = 256;
pub const THREADS_VAR: &str = "INTRADAY_EQ_THREADS";

/// Pool capped by `INTRADAY_EQ_THREADS` when it holds a positive integer.
pub fn thread_pool() -> anyhow::Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| anyhow::anyhow!("{THREADS_VAR} must be a positive integer, got {v:?}"))?;
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub mode: SimMode,
    pub seed: u64,
    pub paths: usize,
    /// Number of leading paths returned in full.
    pub keep: usize,
    pub fault: Option<Fault>,
}

#[derive(Clone, Debug)]
pub struct EnsembleRun {
    pub stats: EnsembleStats,
    pub kept: Vec<SimulatedPath>,
}

fn chunks(paths: usize) -> Vec<(u64, u64)> {
    (0..paths.div_ceil(CHUNK))
        .map(|c| ((c * CHUNK) as u64, ((c + 1) * CHUNK).min(paths) as u64))
        .collect()
}

fn simulator<'a>(scenario: &'a MarketScenario, tables: &'a [RiccatiTable], config: &EnsembleConfig) -> Result<Simulator<'a>> {
    let sim = Simulator::new(scenario, tables, config.mode)?;
    Ok(match config.fault {
        Some(f) => sim.with_fault(f),
        None => sim,
    })
}

pub fn run_ensemble(pool: &rayon::ThreadPool, scenario: &MarketScenario, tables: &[RiccatiTable], config: &EnsembleConfig) -> Result<EnsembleRun> {
    let sim = simulator(scenario, tables, config)?;
    let plan = RngPlan::new(config.seed, scenario.n_agents());
    let parts: Vec<Result<(EnsembleAccumulator, Vec<SimulatedPath>)>> = pool.install(|| {
        chunks(config.paths)
            .into_par_iter()
            .map(|(lo, hi)| {
                let mut acc = EnsembleAccumulator::new(scenario);
                let mut kept = Vec::new();
                for idx in lo..hi {
                    let path = sim.simulate_path(&plan, idx)?;
                    acc.push(&path)?;
                    if (idx as usize) < config.keep {
                        kept.push(path);
                    }
                }
                Ok((acc, kept))
            })
            .collect()
    });
    let mut total = EnsembleAccumulator::new(scenario);
    let mut kept = Vec::new();
    for part in parts {
        let (acc, k) = part?;
        total.merge(&acc);
        kept.extend(k);
    }
    Ok(EnsembleRun { stats: total.finish(), kept })
}

/// Paired difference `J_i(q̂ + bump) - J_i(q̂)` over an ensemble, with the
/// price path held fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpOutcome {
    pub bump: Bump,
    pub mean_diff: f64,
    pub se: f64,
    pub paths: u64,
}

impl BumpOutcome {
    /// No improvement larger than `k` standard errors.
    pub fn passes(&self, k: f64) -> bool {
        self.mean_diff >= -k * self.se
    }
}

pub fn variational_ensemble(
    pool: &rayon::ThreadPool,
    scenario: &MarketScenario,
    tables: &[RiccatiTable],
    config: &EnsembleConfig,
    agent: usize,
    bumps: &[Bump],
) -> Result<Vec<BumpOutcome>> {
    let sim = simulator(scenario, tables, config)?;
    let plan = RngPlan::new(config.seed, scenario.n_agents());
    let parts: Vec<Result<Vec<Moments>>> = pool.install(|| {
        chunks(config.paths)
            .into_par_iter()
            .map(|(lo, hi)| {
                let mut m = vec![Moments::default(); bumps.len()];
                for idx in lo..hi {
                    let path = sim.simulate_path(&plan, idx)?;
                    let base = perturbed_cost(scenario, agent, &path, None)?;
                    for (b, acc) in bumps.iter().zip(m.iter_mut()) {
                        acc.push(perturbed_cost(scenario, agent, &path, Some(b))? - base);
                    }
                }
                Ok(m)
            })
            .collect()
    });
    let mut total = vec![Moments::default(); bumps.len()];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part?) {
            t.merge(&p);
        }
    }
    Ok(bumps
        .iter()
        .zip(total)
        .map(|(b, m)| BumpOutcome {
            bump: *b,
            mean_diff: m.mean,
            se: m.se(),
            paths: m.count,
        })
        .collect())
}
