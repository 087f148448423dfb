//! Invariant suite run by the `check` subcommand.

use std::fmt;

use intraday_eq_core::analysis::{martingale_test, realized_volatility};
use intraday_eq_core::jump::{invert_rank_one, DMatrix, MatrixState};
use intraday_eq_core::nojump::{compute_weights, volatility_curve};
use intraday_eq_core::pathsim::{solve_tables, Bump, Fault, SimMode};
use intraday_eq_core::riccati::{closed_form_y2, NEG_TOL};
use intraday_eq_core::{MarketScenario, Result};

use crate::ensemble::{run_ensemble, variational_ensemble, EnsembleConfig};

pub const CLEARING_TOL: f64 = 1e-10;
pub const Z_THRESHOLD: f64 = 3.0;
pub const VOL_REL_TOL: f64 = 0.05;
pub const VOL_MIN_PATHS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, pass: bool, detail: String) -> Self {
        let status = if pass { Status::Pass } else { Status::Fail };
        Self { name, status, detail }
    }

    fn skip(name: &'static str, why: &str) -> Self {
        Self {
            name,
            status: Status::Skip,
            detail: why.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    pub paths: usize,
    pub mode: SimMode,
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.status != Status::Fail)
}

/// Runs every invariant that applies to `scenario`.
pub fn run_checks(pool: &rayon::ThreadPool, scenario: &MarketScenario, opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let grid = scenario.grid();
    let tables = solve_tables(scenario)?;

    let min_y = tables.iter().map(|t| t.min_value()).fold(f64::INFINITY, f64::min);
    let clamped: usize = tables.iter().map(|t| t.clamped_count()).sum();
    out.push(CheckResult::new(
        "riccati-positivity",
        clamped == 0 && min_y >= -NEG_TOL,
        format!("min y = {min_y:.3e}, clamped entries = {clamped}"),
    ));

    if scenario.is_jump_free() {
        let mut err = 0.0f64;
        let mut ident = 0.0f64;
        for (agent, table) in scenario.agents.iter().zip(&tables) {
            let e = agent.initial_state;
            let disc = table.tail_discount(e)?;
            for (k, t) in grid.points().enumerate() {
                let exact = closed_form_y2(agent, e, t, grid.horizon())?;
                err = err.max((table.value(e, k)? - exact).abs() / exact.abs().max(1.0));
                ident = ident.max((table.a_at_node(e, k)? - (1.0 - disc[k])).abs());
            }
        }
        out.push(CheckResult::new("riccati-closed-form", err < 1e-8, format!("max relative error {err:.3e}")));
        out.push(CheckResult::new("a-discount-identity", ident < 1e-6, format!("max error {ident:.3e}")));
    } else {
        out.push(CheckResult::skip("riccati-closed-form", "scenario has jumps"));
        out.push(CheckResult::skip("a-discount-identity", "scenario has jumps"));
    }

    let states: Vec<usize> = scenario.agents.iter().map(|a| a.initial_state).collect();
    let d0: Vec<f64> = scenario.agents.iter().map(|a| a.d0).collect();
    let x0: Vec<f64> = scenario.agents.iter().map(|a| a.x0).collect();
    let mut inv_err = 0.0f64;
    for k in [0, grid.steps() / 2, grid.steps()] {
        let st = MatrixState::from_market(scenario, &tables, &states, grid.point(k), &d0, &x0)?;
        let inv = invert_rank_one(&st.a, &st.gammas)?;
        let m = identity_residual(&st, &inv);
        inv_err = inv_err.max(m);
    }
    out.push(CheckResult::new("rank-one-inverse", inv_err < 1e-10, format!("max |M M^-1 - I| = {inv_err:.3e}")));

    if scenario.is_jump_free() && scenario.is_driftless() {
        let w = compute_weights(scenario, &tables)?;
        let dev = (0..grid.len())
            .map(|k| (w.big_f.iter().map(|f| f[k]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        out.push(CheckResult::new("weights-sum-to-one", dev < 1e-12, format!("max |sum F - 1| = {dev:.3e}")));
    } else {
        out.push(CheckResult::skip("weights-sum-to-one", "closed-form weights need a jump-free driftless market"));
    }

    let config = EnsembleConfig {
        mode: opts.mode,
        seed: opts.seed,
        paths: opts.paths,
        keep: 0,
        fault: None,
    };
    let run = run_ensemble(pool, scenario, &tables, &config)?;
    let stats = &run.stats;
    out.push(CheckResult::new(
        "clearing",
        stats.clearing_max < CLEARING_TOL,
        format!("max |sum q| = {:.3e} over {} paths", stats.clearing_max, stats.paths),
    ));

    let faulty = run_ensemble(pool, scenario, &tables, &EnsembleConfig {
        paths: opts.paths.min(500),
        fault: Some(Fault::Clearing(1e-6)),
        ..config
    })?;
    out.push(CheckResult::new(
        "clearing-fault-detected",
        faulty.stats.clearing_max >= CLEARING_TOL,
        format!("max |sum q| = {:.3e} with a 1e-6 offset", faulty.stats.clearing_max),
    ));

    let zeta_bar = {
        let z = &stats.zeta_hat;
        (z.iter().sum::<f64>() / z.len() as f64).sqrt()
    };
    match martingale_test(stats) {
        Ok(report) => {
            let detail = if report.price.is_degenerate() {
                "price increments are constant (degenerate)".to_string()
            } else {
                format!(
                    "pooled z: price {:.3}, max over series {:.3}",
                    report.price.pooled_z.unwrap_or(0.0),
                    report.max_abs_z()
                )
            };
            out.push(CheckResult::new("martingale", report.passes(Z_THRESHOLD), detail));
            if report.price.is_degenerate() {
                out.push(CheckResult::skip("martingale-fault-detected", "price is deterministic"));
            } else {
                // Drift sized to move the pooled price statistic by about 8.
                let rate = 8.0 * zeta_bar / (opts.paths as f64 * grid.horizon()).sqrt();
                let biased = run_ensemble(pool, scenario, &tables, &EnsembleConfig {
                    fault: Some(Fault::Drift(rate)),
                    ..config
                })?;
                let z = martingale_test(&biased.stats)?.price.pooled_z.unwrap_or(0.0);
                out.push(CheckResult::new(
                    "martingale-fault-detected",
                    z.abs() > Z_THRESHOLD,
                    format!("drift {rate:.3e} per hour gives pooled z {z:.3}"),
                ));
            }
        }
        Err(e) => out.push(CheckResult::skip("martingale", &e.to_string())),
    }

    if scenario.is_jump_free() && scenario.is_driftless() && opts.paths >= VOL_MIN_PATHS {
        let w = compute_weights(scenario, &tables)?;
        let analytic = volatility_curve(scenario, &w)?.zeta_sq;
        let est = realized_volatility(stats);
        if analytic.iter().all(|z| *z == 0.0) {
            let max = est.zeta_hat.iter().fold(0.0f64, |m, z| m.max(z.abs()));
            out.push(CheckResult::new("volatility-law", max < 1e-20, format!("zero analytic curve, max estimate {max:.3e}")));
        } else {
            let err = est.max_relative_error(&analytic, grid.horizon(), 0.9);
            out.push(CheckResult::new("volatility-law", err < VOL_REL_TOL, format!("max relative error {err:.4} for t <= 0.9T")));
            let doubled: Vec<f64> = analytic.iter().map(|z| 4.0 * z).collect();
            let wrong = est.max_relative_error(&doubled, grid.horizon(), 0.9);
            out.push(CheckResult::new(
                "volatility-fault-detected",
                wrong >= VOL_REL_TOL,
                format!("relative error {wrong:.4} against a curve with 2x volatility"),
            ));
        }
    } else {
        out.push(CheckResult::skip("volatility-law", "needs a jump-free driftless market and at least 10000 paths"));
    }

    let horizon = grid.horizon();
    let bumps: Vec<Bump> = [0.1, -0.1, 1.0, -1.0]
        .into_iter()
        .flat_map(|delta| {
            [
                Bump { start: 0.0, end: 0.5 * horizon, delta },
                Bump { start: 0.25 * horizon, end: horizon, delta },
            ]
        })
        .collect();
    let var_paths = opts.paths.min(2000);
    let mut worst: Option<(f64, f64)> = None;
    let mut pass = true;
    for agent in 0..scenario.n_agents() {
        let outcomes = variational_ensemble(pool, scenario, &tables, &EnsembleConfig { paths: var_paths, ..config }, agent, &bumps)?;
        for o in outcomes {
            pass &= o.passes(2.0);
            let score = o.mean_diff / o.se.max(f64::MIN_POSITIVE);
            if worst.is_none_or(|(s, _)| score < s) {
                worst = Some((score, o.mean_diff));
            }
        }
    }
    let (score, diff) = worst.unwrap_or((0.0, 0.0));
    out.push(CheckResult::new(
        "variational-optimality",
        pass,
        format!("{} bumps per agent; smallest cost change {diff:.4e} ({score:.2} SE)", bumps.len()),
    ));

    Ok(out)
}

/// `max |(I - γ̄AJ) M - I|`.
fn identity_residual(st: &MatrixState, inv: &DMatrix<f64>) -> f64 {
    let n = st.n();
    let m = DMatrix::<f64>::identity(n, n) - st.a_matrix() * st.j_matrix() * st.gamma_bar();
    (m * inv - DMatrix::<f64>::identity(n, n)).amax()
}
