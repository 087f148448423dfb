//! Brute-force discrete-time equilibrium with deterministic demands.
//!
//! Each agent minimises
//! `Σ_k q_i[k] (P[k] + γ_i q_i[k]) Δt + ½ ε_i (D_i[K] - X_i[K])²`
//! and the first-order conditions are stacked with market clearing into one
//! dense linear system in `(q, P)`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const RESIDUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-14;
/// Errors at or below this level count as exact agreement.
pub const EXACT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteGame {
    pub steps: usize,
    pub dt: f64,
    pub gammas: Vec<f64>,
    pub eps: Vec<f64>,
    /// `demands[i][k]` for `k = 0..=K`.
    pub demands: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
}

impl DiscreteGame {
    /// Game with linear demands `d0 + μ t` on `[0, horizon]`.
    pub fn linear(horizon: f64, steps: usize, gammas: Vec<f64>, eps: Vec<f64>, d0: &[f64], mu: &[f64], x0: Vec<f64>) -> Self {
        let dt = horizon / steps as f64;
        let demands = d0
            .iter()
            .zip(mu)
            .map(|(d, m)| (0..=steps).map(|k| d + m * dt * k as f64).collect())
            .collect();
        Self {
            steps,
            dt,
            gammas,
            eps,
            demands,
            x0,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.gammas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_agents();
        if n == 0 {
            return Err(Error::Empty("agents"));
        }
        if self.steps < 1 {
            return Err(Error::Precondition("at least one step"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Precondition("positive time step"));
        }
        for v in [&self.eps, &self.x0] {
            if v.len() != n {
                return Err(Error::Dimension { expected: n, got: v.len() });
            }
        }
        if self.demands.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.demands.len(),
            });
        }
        if let Some(d) = self.demands.iter().find(|d| d.len() != self.steps + 1) {
            return Err(Error::Dimension {
                expected: self.steps + 1,
                got: d.len(),
            });
        }
        if self.gammas.iter().chain(&self.eps).any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Precondition("gamma and eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSolution {
    /// `q[i][k]` for `k = 0..K`.
    pub q: Vec<Vec<f64>>,
    /// `P[k]` for `k = 0..K`.
    pub price: Vec<f64>,
    /// Max-norm residual of the linear system.
    pub residual: f64,
}

impl DiscreteSolution {
    /// Inventories `X_i[k]`, `k = 0..=K`.
    pub fn inventories(&self, game: &DiscreteGame) -> Vec<Vec<f64>> {
        self.q
            .iter()
            .zip(&game.x0)
            .map(|(qi, &x)| {
                let mut out = Vec::with_capacity(qi.len() + 1);
                out.push(x);
                let mut acc = x;
                for q in qi {
                    acc += q * game.dt;
                    out.push(acc);
                }
                out
            })
            .collect()
    }
}

pub fn solve_discrete_equilibrium(game: &DiscreteGame) -> Result<DiscreteSolution> {
    game.validate()?;
    let n = game.n_agents();
    let k = game.steps;
    let size = n * k + k;
    let q_idx = |i: usize, j: usize| i * k + j;
    let p_idx = |j: usize| n * k + j;

    let mut m = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    for i in 0..n {
        let (g, e) = (game.gammas[i], game.eps[i]);
        let target = e * (game.demands[i][k] - game.x0[i]);
        for j in 0..k {
            let row = q_idx(i, j);
            for l in 0..k {
                m[(row, q_idx(i, l))] += e * game.dt;
            }
            m[(row, q_idx(i, j))] += 2.0 * g;
            m[(row, p_idx(j))] = 1.0;
            rhs[row] = target;
        }
    }
    for j in 0..k {
        for i in 0..n {
            m[(p_idx(j), q_idx(i, j))] = 1.0;
        }
    }

    let lu = m.clone().lu();
    let u = lu.u();
    let diag = u.diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d.abs()), hi.max(d.abs())));
    let condition = if hi > 0.0 { lo / hi } else { 0.0 };
    if !(condition > PIVOT_TOL) {
        return Err(Error::Singular { condition });
    }
    let x = lu.solve(&rhs).ok_or(Error::Singular { condition })?;
    let scale = 1.0 + rhs.amax();
    let residual = (&m * &x - &rhs).amax() / scale;
    if !(residual < RESIDUAL_TOL) {
        return Err(Error::Residual { residual });
    }
    let q = (0..n)
        .map(|i| (0..k).map(|j| x[q_idx(i, j)]).collect())
        .collect();
    let price = (0..k).map(|j| x[p_idx(j)]).collect();
    Ok(DiscreteSolution { q, price, residual })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub steps: usize,
    pub max_err_price: f64,
    pub max_err_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Every error is at roundoff level.
    Exact,
    /// Price errors strictly decrease in `K`.
    Converging,
    NotDecreasing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `-log err` against `log K` (price errors).
    pub order: Option<f64>,
    pub verdict: Verdict,
}

impl ConvergenceReport {
    pub fn final_price_error(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.max_err_price)
    }
}

/// Discrete price and rate paths next to a reference on the same grid.
pub type ReferencePaths = (Vec<f64>, Vec<Vec<f64>>);

/// Solves every game and compares against `reference`, which returns the
/// price `P[k]` and rates `q[i][k]` of the continuous model on the game's
/// grid for `k = 0..K`.
pub fn convergence_report<F>(games: &[DiscreteGame], mut reference: F) -> Result<ConvergenceReport>
where
    F: FnMut(&DiscreteGame) -> Result<ReferencePaths>,
{
    if games.is_empty() {
        return Err(Error::Empty("games"));
    }
    let mut rows = Vec::with_capacity(games.len());
    for game in games {
        let sol = solve_discrete_equilibrium(game)?;
        let (p_ref, q_ref) = reference(game)?;
        if p_ref.len() < game.steps {
            return Err(Error::Dimension {
                expected: game.steps,
                got: p_ref.len(),
            });
        }
        let max_err_price = (0..game.steps)
            .map(|k| (sol.price[k] - p_ref[k]).abs())
            .fold(0.0, f64::max);
        let mut max_err_rate = 0.0f64;
        for (qi, ri) in sol.q.iter().zip(&q_ref) {
            for k in 0..game.steps {
                max_err_rate = max_err_rate.max((qi[k] - ri[k]).abs());
            }
        }
        rows.push(ConvergenceRow {
            steps: game.steps,
            max_err_price,
            max_err_rate,
        });
    }
    let exact = rows.iter().all(|r| r.max_err_price <= EXACT_TOL && r.max_err_rate <= EXACT_TOL);
    let decreasing = rows.windows(2).all(|w| w[1].max_err_price < w[0].max_err_price);
    let verdict = if exact {
        Verdict::Exact
    } else if decreasing {
        Verdict::Converging
    } else {
        Verdict::NotDecreasing
    };
    let order = if exact { None } else { fitted_order(&rows) };
    Ok(ConvergenceReport { rows, order, verdict })
}

fn fitted_order(rows: &[ConvergenceRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.max_err_price > 0.0)
        .map(|r| (libm::log(r.steps as f64), libm::log(r.max_err_price)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(-sxy / sxx)
}

/// Convenience: the same game at each of `steps`.
pub fn game_family(horizon: f64, steps: &[usize], gammas: &[f64], eps: &[f64], d0: &[f64], mu: &[f64], x0: &[f64]) -> Vec<DiscreteGame> {
    steps
        .iter()
        .map(|&k| DiscreteGame::linear(horizon, k, gammas.to_vec(), eps.to_vec(), d0, mu, x0.to_vec()))
        .collect()
}

/// Zero vector helper for references with no rates.
pub fn zeros(n: usize, k: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; k]; n]
}
