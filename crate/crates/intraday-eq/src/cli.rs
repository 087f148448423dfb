//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use intraday_eq_core::analysis::{self, classify, martingale_test, LambdaSweep};
use intraday_eq_core::jump::{two_agent_solve, TwoAgentModel, TwoAgentPath};
use intraday_eq_core::nojump::{compute_weights, volatility_curve};
use intraday_eq_core::oracle::{convergence_report, DiscreteGame, ReferencePaths};
use intraday_eq_core::pathsim::{simulate_chain, solve_tables, RngPlan, SimMode, Simulator};
use intraday_eq_core::MarketScenario;

use crate::checks::{all_passed, run_checks, CheckOptions};
use crate::ensemble::{run_ensemble, thread_pool, EnsembleConfig};
use crate::manifest::RunManifest;
use crate::scenario::{auto_mode, expand_mixture, load_scenario};
use crate::io;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

pub const DEFAULT_ALPHAS: [f64; 5] = [1.0, 0.115, 0.05, 0.005, 0.0];
pub const TWO_AGENT_SUBSTEPS: usize = 4;

#[derive(Parser, Debug)]
#[command(name = "intraday-eq", version, about = "Intraday electricity market equilibrium toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Scenario document (JSON).
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    /// Grid steps; overrides the scenario's `grid_steps` when given.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "./out")]
    pub out: PathBuf,
    /// nojump-closed-form, two-agent-jump, large-n-approx or auto.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<ModeArg>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModeArg {
    Auto,
    Fixed(SimMode),
}

fn parse_mode(s: &str) -> Result<ModeArg, String> {
    if s == "auto" {
        return Ok(ModeArg::Auto);
    }
    s.parse::<SimMode>().map(ModeArg::Fixed).map_err(|_| {
        let names: Vec<_> = SimMode::ALL.iter().map(|m| m.name()).collect();
        format!("expected auto or one of {}", names.join(", "))
    })
}

#[derive(Args, Debug, Clone)]
pub struct Mixture {
    /// Share of the first agent type; the scenario's two agents are read as
    /// the two types.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Market size when mixing agent types.
    #[arg(long, default_value_t = 200)]
    pub n_agents: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Riccati values per agent, state and node.
    Riccati {
        #[command(flatten)]
        common: Common,
    },
    /// Aggregation weights of the jump-free market.
    Weights {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mixture: Mixture,
    },
    /// Analytic price volatility curve.
    Volatility {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mixture: Mixture,
    },
    /// Monte Carlo ensemble of equilibrium paths.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mixture: Mixture,
        #[arg(long, default_value_t = 20)]
        max_written_paths: usize,
    },
    /// Volatility curves over the share of the first agent type.
    SweepAlpha {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ALPHAS)]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        n_agents: usize,
    },
    /// Time-0 price and rate over agent 2's switching rate.
    JumpStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
    },
    /// Closed-form two-agent trajectories with production jumps.
    TwoAgent {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        max_written_paths: usize,
    },
    /// Discrete-time equilibrium against the continuous solution.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [25usize, 50, 100, 200])]
        ks: Vec<usize>,
    },
    /// Full invariant suite.
    Check {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mixture: Mixture,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Riccati { .. } => "riccati",
            Command::Weights { .. } => "weights",
            Command::Volatility { .. } => "volatility",
            Command::Simulate { .. } => "simulate",
            Command::SweepAlpha { .. } => "sweep-alpha",
            Command::JumpStudy { .. } => "jump-study",
            Command::TwoAgent { .. } => "two-agent",
            Command::Oracle { .. } => "oracle",
            Command::Check { .. } => "check",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Riccati { common }
            | Command::Weights { common, .. }
            | Command::Volatility { common, .. }
            | Command::Simulate { common, .. }
            | Command::SweepAlpha { common, .. }
            | Command::JumpStudy { common, .. }
            | Command::TwoAgent { common, .. }
            | Command::Oracle { common, .. }
            | Command::Check { common, .. } => common,
        }
    }

    fn flags(&self) -> BTreeMap<String, String> {
        let c = self.common();
        let mut f = BTreeMap::new();
        f.insert("paths".into(), c.paths.to_string());
        if let Some(k) = c.steps {
            f.insert("steps".into(), k.to_string());
        }
        if let Some(m) = c.mode {
            let name = match m {
                ModeArg::Auto => "auto",
                ModeArg::Fixed(m) => m.name(),
            };
            f.insert("mode".into(), name.into());
        }
        let join = |v: &[String]| v.join(",");
        match self {
            Command::Weights { mixture, .. } | Command::Volatility { mixture, .. } | Command::Check { mixture, .. } => {
                mixture_flags(&mut f, mixture);
            }
            Command::Simulate { mixture, max_written_paths, .. } => {
                mixture_flags(&mut f, mixture);
                f.insert("max-written-paths".into(), max_written_paths.to_string());
            }
            Command::SweepAlpha { alphas, n_agents, .. } => {
                f.insert("alphas".into(), join(&alphas.iter().map(f64::to_string).collect::<Vec<_>>()));
                f.insert("n-agents".into(), n_agents.to_string());
            }
            Command::JumpStudy { lambdas, .. } if !lambdas.is_empty() => {
                f.insert("lambdas".into(), join(&lambdas.iter().map(f64::to_string).collect::<Vec<_>>()));
            }
            Command::TwoAgent { max_written_paths, .. } => {
                f.insert("max-written-paths".into(), max_written_paths.to_string());
            }
            Command::Oracle { ks, .. } => {
                f.insert("ks".into(), join(&ks.iter().map(usize::to_string).collect::<Vec<_>>()));
            }
            _ => {}
        }
        f
    }
}

fn mixture_flags(f: &mut BTreeMap<String, String>, m: &Mixture) {
    if let Some(a) = m.alpha {
        f.insert("alpha".into(), a.to_string());
        f.insert("n-agents".into(), m.n_agents.to_string());
    }
}

/// Result of a successful dispatch.
#[derive(Debug, PartialEq)]
pub enum Outcome {
    Done,
    ChecksFailed,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(&cli) {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::ChecksFailed) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_VALIDATION
        }
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn create(&mut self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }
}

fn scenario_for(common: &Common, mixture: Option<&Mixture>) -> anyhow::Result<MarketScenario> {
    let mut s = load_scenario(&common.scenario)?;
    if let Some(k) = common.steps {
        s = s.with_steps(k);
        s.validate()?;
    }
    if let Some(alpha) = mixture.and_then(|m| m.alpha) {
        s = expand_mixture(&s, alpha, mixture.map_or(0, |m| m.n_agents))?;
    }
    Ok(s)
}

fn mode_for(common: &Common, scenario: &MarketScenario) -> SimMode {
    match common.mode {
        Some(ModeArg::Fixed(m)) => m,
        _ => auto_mode(scenario),
    }
}

pub fn dispatch(cli: &Cli) -> anyhow::Result<Outcome> {
    let started = Instant::now();
    let common = cli.command.common();
    fs::create_dir_all(&common.out).with_context(|| format!("cannot create {}", common.out.display()))?;
    let pool = thread_pool()?;
    let mut outputs = Outputs {
        dir: &common.out,
        files: Vec::new(),
    };
    let mut outcome = Outcome::Done;

    match &cli.command {
        Command::Riccati { common } => {
            let s = scenario_for(common, None)?;
            let tables = solve_tables(&s)?;
            io::write_riccati(outputs.create("riccati.csv")?, &tables)?;
            let min = tables.iter().map(|t| t.min_value()).fold(f64::INFINITY, f64::min);
            let clamped: usize = tables.iter().map(|t| t.clamped_count()).sum();
            println!("agents {}  nodes {}  min y {min:.6e}  clamped {clamped}", s.n_agents(), s.grid().len());
        }
        Command::Weights { common, mixture } => {
            let s = scenario_for(common, Some(mixture))?;
            let w = compute_weights(&s, &solve_tables(&s)?)?;
            io::write_weights(outputs.create("weights.csv")?, &w)?;
            println!("agents {}  gamma_bar {:.6e}", s.n_agents(), w.gamma_bar);
        }
        Command::Volatility { common, mixture } => {
            let s = scenario_for(common, Some(mixture))?;
            let w = compute_weights(&s, &solve_tables(&s)?)?;
            let curve = volatility_curve(&s, &w)?;
            io::write_zeta(outputs.create("zeta.csv")?, &curve)?;
            let shape = classify(&curve.zeta_sq);
            println!(
                "zeta_sq(0) {:.6e}  zeta_sq(T) {:.6e}  shape {}",
                curve.zeta_sq[0],
                curve.zeta_sq.last().copied().unwrap_or(0.0),
                shape.label()
            );
        }
        Command::Simulate { common, mixture, max_written_paths } => {
            let s = scenario_for(common, Some(mixture))?;
            let tables = solve_tables(&s)?;
            let mode = mode_for(common, &s);
            let config = EnsembleConfig {
                mode,
                seed: common.seed,
                paths: common.paths,
                keep: (*max_written_paths).min(common.paths),
                fault: None,
            };
            let run = run_ensemble(&pool, &s, &tables, &config)?;
            let analytic = if s.is_jump_free() && s.is_driftless() {
                Some(volatility_curve(&s, &compute_weights(&s, &tables)?)?.zeta_sq)
            } else {
                None
            };
            io::write_paths(outputs.create("paths.csv")?, &s.grid(), &run.kept)?;
            io::write_ensemble(outputs.create("ensemble.csv")?, &run.stats, analytic.as_deref())?;
            println!("mode {mode}  paths {}  max |sum q| {:.3e}", run.stats.paths, run.stats.clearing_max);
            if let Ok(r) = martingale_test(&run.stats) {
                match r.price.pooled_z {
                    Some(z) => {
                        let rates: Vec<String> = r
                            .rates
                            .iter()
                            .map(|s| s.pooled_z.map_or("constant".into(), |z| format!("{z:.3}")))
                            .collect();
                        println!("pooled drift z: price {z:.3}  rates [{}]", rates.join(", "));
                    }
                    None => println!("price increments are constant"),
                }
            }
        }
        Command::SweepAlpha { common, alphas, n_agents } => {
            let base = scenario_for(common, None)?;
            if base.n_agents() != 2 {
                bail!("sweep-alpha reads agents[0] and agents[1] as the two types; found {} agents", base.n_agents());
            }
            let (t1, t2) = (&base.agents[0], &base.agents[1]);
            let curves: Vec<_> = pool.install(|| {
                alphas
                    .par_iter()
                    .map(|a| analysis::samuelson_sweep(t1, t2, &[*a], *n_agents, base.horizon, base.grid_steps))
                    .collect::<Result<Vec<_>, _>>()
            })?;
            let curves: Vec<_> = curves.into_iter().flatten().collect();
            io::write_alpha_sweep(outputs.create("alpha_sweep.csv")?, &curves)?;
            for c in &curves {
                println!("alpha {:<8} type-1 agents {:>4}  {}", c.alpha, c.n_type1, c.shape.label());
            }
        }
        Command::JumpStudy { common, lambdas } => {
            let s = scenario_for(common, None)?;
            let grid: Vec<f64> = if lambdas.is_empty() {
                (0..=20).map(|i| i as f64 / 20.0).collect()
            } else {
                lambdas.clone()
            };
            let sweep = parallel_lambda_sweep(&pool, &s, &grid)?;
            io::write_jump_sweep(outputs.create("jump_sweep.csv")?, &sweep)?;
            for r in &sweep.rows {
                println!("lambda {:<5} P0 {:>12.6}  q2_0 {:>10.6}", r.lambda, r.p0, r.q2_0);
            }
            println!(
                "P0 increasing {}  q2_0 increasing {}  q2_0 sign changes {}",
                sweep.p0_increasing, sweep.q2_increasing, sweep.q2_sign_changes
            );
        }
        Command::TwoAgent { common, max_written_paths } => {
            let s = scenario_for(common, None)?;
            let tables = solve_tables(&s)?;
            let model = TwoAgentModel::new(&s, &tables)?;
            let plan = RngPlan::new(common.seed, 2);
            let paths: Vec<(u64, TwoAgentPath)> = pool.install(|| {
                (0..common.paths as u64)
                    .into_par_iter()
                    .map(|idx| {
                        let chain = simulate_chain(&s.agents[1], s.horizon, &mut plan.chain(idx, 1));
                        two_agent_solve(&model, &chain, s.grid(), TWO_AGENT_SUBSTEPS).map(|p| (idx, p))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })?;
            let shown = (*max_written_paths).min(paths.len());
            io::write_two_agent_paths(outputs.create("two_agent_paths.csv")?, &paths[..shown])?;
            io::write_jump_events(outputs.create("jumps.csv")?, &paths)?;
            let events: Vec<_> = paths.iter().flat_map(|(_, p)| &p.jumps).collect();
            let up = events.iter().filter(|j| j.price_after > j.price_before).count();
            println!("paths {}  jumps {}  upward price jumps {up}", paths.len(), events.len());
        }
        Command::Oracle { common, ks } => {
            let s = scenario_for(common, None)?;
            if !s.is_deterministic() || !s.is_jump_free() {
                bail!("the discrete oracle needs a deterministic jump-free scenario");
            }
            let games = ks.iter().map(|&k| discrete_game(&s, k)).collect::<anyhow::Result<Vec<_>>>()?;
            let refs: Vec<ReferencePaths> = pool.install(|| {
                ks.par_iter()
                    .map(|&k| continuous_reference(&s, k, common.seed, mode_for(common, &s)))
                    .collect::<Result<Vec<_>, _>>()
            })?;
            let mut refs = refs.into_iter();
            let report = convergence_report(&games, |_| {
                refs.next().ok_or(intraday_eq_core::Error::Empty("references"))
            })?;
            io::write_oracle(outputs.create("oracle_convergence.csv")?, &report)?;
            for r in &report.rows {
                println!("K {:>5}  max_err_P {:.3e}  max_err_q {:.3e}", r.steps, r.max_err_price, r.max_err_rate);
            }
            match report.order {
                Some(o) => println!("verdict {:?}  fitted order {o:.3}", report.verdict),
                None => println!("verdict {:?}", report.verdict),
            }
        }
        Command::Check { common, mixture } => {
            let s = scenario_for(common, Some(mixture))?;
            let opts = CheckOptions {
                seed: common.seed,
                paths: common.paths,
                mode: mode_for(common, &s),
            };
            let results = run_checks(&pool, &s, &opts)?;
            let mut w = csv::Writer::from_writer(outputs.create("check.csv")?);
            w.write_record(["name", "status", "detail"])?;
            for r in &results {
                w.write_record([r.name, &r.status.to_string(), &r.detail])?;
                println!("{:<6} {:<28} {}", r.status.to_string(), r.name, r.detail);
            }
            w.flush()?;
            if !all_passed(&results) {
                outcome = Outcome::ChecksFailed;
            }
        }
    }

    let manifest = RunManifest {
        subcommand: cli.command.name().to_string(),
        scenario: common.scenario.clone(),
        seed: common.seed,
        flags: cli.command.flags(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: outputs.files,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    manifest.write(&common.out)?;
    Ok(outcome)
}

/// Time-0 sweep with the λ grid points solved concurrently.
pub fn parallel_lambda_sweep(pool: &rayon::ThreadPool, scenario: &MarketScenario, lambdas: &[f64]) -> intraday_eq_core::Result<LambdaSweep> {
    let parts = pool.install(|| {
        lambdas
            .par_iter()
            .map(|l| analysis::lambda_sweep(scenario, &[*l]))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let rows: Vec<_> = parts.into_iter().flat_map(|p| p.rows).collect();
    let p0: Vec<f64> = rows.iter().map(|r| r.p0).collect();
    let q2: Vec<f64> = rows.iter().map(|r| r.q2_0).collect();
    Ok(LambdaSweep {
        p0_increasing: analysis::strictly_increasing(&p0),
        q2_increasing: analysis::strictly_increasing(&q2),
        q2_sign_changes: analysis::sign_changes(&q2),
        rows,
    })
}

/// Discrete game matching a deterministic jump-free scenario on `steps`.
pub fn discrete_game(s: &MarketScenario, steps: usize) -> anyhow::Result<DiscreteGame> {
    let eps = s
        .agents
        .iter()
        .map(|a| a.effective_cost(a.initial_state))
        .collect::<Result<Vec<_>, _>>()?;
    let pick = |f: fn(&intraday_eq_core::AgentSpec) -> f64| s.agents.iter().map(f).collect::<Vec<_>>();
    Ok(DiscreteGame::linear(
        s.horizon,
        steps,
        pick(|a| a.gamma),
        eps,
        &pick(|a| a.d0),
        &pick(|a| a.mu),
        pick(|a| a.x0),
    ))
}

/// Continuous feedback equilibrium on the `steps`-grid, nodes `0..steps`.
pub fn continuous_reference(s: &MarketScenario, steps: usize, seed: u64, mode: SimMode) -> intraday_eq_core::Result<ReferencePaths> {
    let s = s.with_steps(steps);
    let tables = solve_tables(&s)?;
    let sim = Simulator::new(&s, &tables, mode)?;
    let path = sim.simulate_path(&RngPlan::new(seed, s.n_agents()), 0)?;
    let price = path.price[..steps].to_vec();
    let rates = path.rates.iter().map(|q| q[..steps].to_vec()).collect();
    Ok((price, rates))
}
