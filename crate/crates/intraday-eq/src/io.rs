//! CSV outputs. Every file has a header row and one record per line.

use std::io::Write;

use intraday_eq_core::analysis::{EnsembleStats, LambdaSweep, SweepCurve};
use intraday_eq_core::jump::TwoAgentPath;
use intraday_eq_core::nojump::{VolatilityCurve, WeightCurves};
use intraday_eq_core::oracle::ConvergenceReport;
use intraday_eq_core::pathsim::SimulatedPath;
use intraday_eq_core::riccati::RiccatiTable;
use intraday_eq_core::TimeGrid;

pub type CsvResult = Result<(), csv::Error>;

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>, csv::Error> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

/// `t, agent, state, y`
pub fn write_riccati<W: Write>(w: W, tables: &[RiccatiTable]) -> CsvResult {
    let mut out = writer(w, &["t", "agent", "state", "y"])?;
    for table in tables {
        let grid = table.grid();
        for e in 0..table.state_count() {
            let ys = table.state_values(e).map_err(to_csv)?;
            for (t, y) in grid.points().zip(ys) {
                out.serialize((t, table.agent(), e, y))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// `t, agent, F, G, pi`
pub fn write_weights<W: Write>(w: W, weights: &WeightCurves) -> CsvResult {
    let mut out = writer(w, &["t", "agent", "F", "G", "pi"])?;
    for (k, t) in weights.grid().points().enumerate() {
        for i in 0..weights.n_agents() {
            out.serialize((t, i, weights.big_f[i][k], weights.g[k], weights.pi[i][k]))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `t, zeta_sq`
pub fn write_zeta<W: Write>(w: W, curve: &VolatilityCurve) -> CsvResult {
    let mut out = writer(w, &["t", "zeta_sq"])?;
    for (t, z) in curve.times.iter().zip(&curve.zeta_sq) {
        out.serialize((t, z))?;
    }
    out.flush()?;
    Ok(())
}

/// Long format `path, t, agent, D, state, X, q, P`.
pub fn write_paths<W: Write>(w: W, grid: &TimeGrid, paths: &[SimulatedPath]) -> CsvResult {
    let mut out = writer(w, &["path", "t", "agent", "D", "state", "X", "q", "P"])?;
    for p in paths {
        for (k, t) in grid.points().enumerate() {
            for i in 0..p.n_agents() {
                out.serialize((p.index, t, i, p.demands[i][k], p.states[i][k], p.inventories[i][k], p.rates[i][k], p.price[k]))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-node summary. Increment columns are empty on the last node; the
/// analytic column is empty when no closed form is available.
pub fn write_ensemble<W: Write>(w: W, stats: &EnsembleStats, analytic_zeta: Option<&[f64]>) -> CsvResult {
    let mut out = writer(
        w,
        &["t", "paths", "P_mean", "P_sd", "dP_mean", "dP_se", "zeta_sq_hat", "zeta_sq_lo", "zeta_sq_hi", "zeta_sq", "clearing_max"],
    )?;
    for (k, t) in stats.times.iter().enumerate() {
        let inc = stats.dp.get(k);
        let z = stats.zeta_hat.get(k).copied();
        let se = stats.zeta_se.get(k).copied();
        out.serialize((
            t,
            stats.paths,
            stats.price[k].mean,
            stats.price[k].sd(),
            inc.map(|m| m.mean),
            inc.map(|m| m.se()),
            z,
            z.zip(se).map(|(z, s)| z - 1.96 * s),
            z.zip(se).map(|(z, s)| z + 1.96 * s),
            analytic_zeta.and_then(|a| a.get(k).copied()),
            stats.clearing_max,
        ))?;
    }
    out.flush()?;
    Ok(())
}

/// `alpha, t, zeta_sq, class`
pub fn write_alpha_sweep<W: Write>(w: W, curves: &[SweepCurve]) -> CsvResult {
    let mut out = writer(w, &["alpha", "t", "zeta_sq", "class"])?;
    for c in curves {
        for (t, z) in c.times.iter().zip(&c.zeta_sq) {
            out.serialize((c.alpha, t, z, c.shape.label()))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `lambda, P0, q2_0`
pub fn write_jump_sweep<W: Write>(w: W, sweep: &LambdaSweep) -> CsvResult {
    let mut out = writer(w, &["lambda", "P0", "q2_0"])?;
    for r in &sweep.rows {
        out.serialize((r.lambda, r.p0, r.q2_0))?;
    }
    out.flush()?;
    Ok(())
}

/// `path, t, state2, X1, X2, P, q1, q2`
pub fn write_two_agent_paths<W: Write>(w: W, paths: &[(u64, TwoAgentPath)]) -> CsvResult {
    let mut out = writer(w, &["path", "t", "state2", "X1", "X2", "P", "q1", "q2"])?;
    for (idx, p) in paths {
        for k in 0..p.times.len() {
            out.serialize((idx, p.times[k], p.state2[k], p.x1[k], p.x2[k], p.price[k], p.q1[k], -p.q1[k]))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `path, t, from, to, P_before, P_after, q2_before, q2_after`
pub fn write_jump_events<W: Write>(w: W, paths: &[(u64, TwoAgentPath)]) -> CsvResult {
    let mut out = writer(w, &["path", "t", "from", "to", "P_before", "P_after", "q2_before", "q2_after"])?;
    for (idx, p) in paths {
        for j in &p.jumps {
            out.serialize((idx, j.time, j.from, j.to, j.price_before, j.price_after, j.q2_before, j.q2_after))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `K, max_err_P, max_err_q`
pub fn write_oracle<W: Write>(w: W, report: &ConvergenceReport) -> CsvResult {
    let mut out = writer(w, &["K", "max_err_P", "max_err_q"])?;
    for r in &report.rows {
        out.serialize((r.steps, r.max_err_price, r.max_err_rate))?;
    }
    out.flush()?;
    Ok(())
}

fn to_csv(e: intraday_eq_core::Error) -> csv::Error {
    csv::Error::from(std::io::Error::other(e.to_string()))
}
