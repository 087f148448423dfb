//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::path::PathBuf;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};

use intraday_eq::cli::{continuous_reference, discrete_game, parallel_lambda_sweep};
use intraday_eq::core::analysis::{martingale_test, realized_volatility, samuelson_sweep, Monotonicity};
use intraday_eq::core::jump::{invert_rank_one, two_agent_solve, DMatrix, MatrixState, TwoAgentModel};
use intraday_eq::core::nojump::{compute_weights, volatility_curve};
use intraday_eq::core::oracle::{convergence_report, Verdict};
use intraday_eq::core::pathsim::{simulate_chain, solve_tables, Bump, Fault, RngPlan, SimMode};
use intraday_eq::core::riccati::{closed_form_y2, solve_riccati, solve_riccati_with, RiccatiOptions, NEG_TOL};
use intraday_eq::core::{AgentSpec, Error, MarketScenario, TimeGrid};
use intraday_eq::ensemble::{run_ensemble, thread_pool, variational_ensemble, EnsembleConfig};
use intraday_eq::scenario::{expand_mixture, load_scenario};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

const SEED: u64 = 42;
const PATHS: usize = 10_000;

fn scenario(name: &str) -> MarketScenario {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", &format!("{name}.json")].iter().collect();
    load_scenario(&path).unwrap_or_else(|e| panic!("{e}"))
}

fn table1(name: &str) -> MarketScenario {
    expand_mixture(&scenario(name), 0.5, 10).expect("mixture")
}

fn pool() -> rayon::ThreadPool {
    thread_pool().expect("thread pool")
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    lo + (hi - lo) * u
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    uniform(rng, lo.ln(), hi.ln()).exp()
}

fn single_state_agents() -> Vec<(AgentSpec, f64)> {
    let left = scenario("table1_left");
    let right = scenario("table1_right");
    let homog = scenario("homogeneous");
    vec![
        (homog.agents[0].clone(), homog.horizon),
        (left.agents[0].clone(), left.horizon),
        (left.agents[1].clone(), left.horizon),
        (right.agents[0].clone(), right.horizon),
        (right.agents[1].clone(), right.horizon),
    ]
}

fn closed_form_error(agent: &AgentSpec, horizon: f64, steps: usize, substeps: usize) -> Result<f64, Error> {
    let grid = TimeGrid::new(horizon, steps);
    let opts = RiccatiOptions { substeps, adaptive: false };
    let table = solve_riccati_with(agent, 0, grid, opts)?;
    let mut err = 0.0f64;
    for (k, t) in grid.points().enumerate() {
        err = err.max((table.value(0, k)? - closed_form_y2(agent, 0, t, horizon)?).abs());
    }
    Ok(err)
}

fn riccati_closed_form() -> Outcome {
    let mut worst = 0.0f64;
    let mut ratio = f64::NAN;
    for (agent, horizon) in single_state_agents() {
        let err = closed_form_error(&agent, horizon, 500, 10)?;
        if err > worst {
            worst = err;
            ratio = err / closed_form_error(&agent, horizon, 1000, 10)?;
        }
    }
    let pass = worst < 1e-8 && (12.0..=20.0).contains(&ratio);
    Ok((pass, format!("max error at K=500 {worst:.3e}; halving ratio {ratio:.2} (K=500 -> 1000, worst agent)")))
}

fn random_agent(rng: &mut ChaCha8Rng) -> AgentSpec {
    let states = 1 + (rng.next_u64() % 4) as usize;
    let costs: Vec<f64> = (0..states).map(|_| log_uniform(rng, 0.01, 100.0)).collect();
    let mut intensity = vec![vec![0.0; states]; states];
    for (e, row) in intensity.iter_mut().enumerate() {
        let mut total = 0.0;
        for (f, v) in row.iter_mut().enumerate() {
            if f != e {
                *v = if rng.next_u64() % 4 == 0 { 0.0 } else { log_uniform(rng, 0.01, 10.0) };
                total += *v;
            }
        }
        row[e] = -total;
    }
    let mut a = AgentSpec::single_state(log_uniform(rng, 0.01, 100.0), log_uniform(rng, 0.1, 100.0), costs[0]);
    a.cost_states = costs;
    a.intensity = intensity;
    a.initial_state = (rng.next_u64() % states as u64) as usize;
    a
}

fn riccati_positivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut negative = 0usize;
    let mut clamped = 0usize;
    let mut min = f64::INFINITY;
    for i in 0..1000 {
        let agent = random_agent(&mut rng);
        agent.validate(i)?;
        let horizon = uniform(&mut rng, 0.5, 6.0);
        match solve_riccati(&agent, i, TimeGrid::new(horizon, 500)) {
            Ok(t) => {
                clamped += t.clamped_count();
                min = min.min(t.min_value());
            }
            Err(Error::NegativeRiccati { .. }) => negative += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let pass = negative == 0 && min >= -NEG_TOL;
    Ok((pass, format!("1000 agents: {negative} negative beyond clamp, {clamped} clamped, min y {min:.3e}")))
}

fn a_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut agents = 0;
    for name in ["homogeneous", "deterministic_two_agent", "heterogeneous_drift", "table1_left", "table1_right"] {
        let s = scenario(name);
        for (agent, table) in s.agents.iter().zip(solve_tables(&s)?) {
            let e = agent.initial_state;
            let disc = table.tail_discount(e)?;
            for k in 0..s.grid().len() {
                worst = worst.max((table.a_at_node(e, k)? - (1.0 - disc[k])).abs());
            }
            agents += 1;
        }
    }
    Ok((worst < 1e-6, format!("{agents} agents, max |a - (1 - exp(-int y/gamma))| {worst:.3e}")))
}

fn rank_one_inverse() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut identity_err = 0.0f64;
    let mut dense_err = 0.0f64;
    for _ in 0..1000 {
        let n = 1 + (rng.next_u64() % 8) as usize;
        let gammas: Vec<f64> = (0..n).map(|_| log_uniform(&mut rng, 0.01, 100.0)).collect();
        let a: Vec<f64> = (0..n).map(|_| uniform(&mut rng, 0.0, 0.999)).collect();
        let st = MatrixState::new(gammas.clone(), a.clone(), vec![0.0; n], vec![0.0; n], vec![0.0; n])?;
        let inv = invert_rank_one(&a, &gammas)?;
        let m = DMatrix::<f64>::identity(n, n) - st.a_matrix() * st.j_matrix() * st.gamma_bar();
        identity_err = identity_err.max((&m * &inv - DMatrix::<f64>::identity(n, n)).amax());
        let dense = m.try_inverse().ok_or("dense inverse failed")?;
        dense_err = dense_err.max((&dense - &inv).amax() / (1.0 + inv.amax()));
    }
    let pass = identity_err < 1e-10 && dense_err < 1e-10;
    Ok((pass, format!("1000 inputs: max |M M^-1 - I| {identity_err:.3e}, relative gap to dense inverse {dense_err:.3e}")))
}

fn clearing() -> Outcome {
    let pool = pool();
    let cases = [
        ("homogeneous", scenario("homogeneous"), SimMode::NoJumpClosedForm),
        ("table1_left", table1("table1_left"), SimMode::NoJumpClosedForm),
        ("table1_right", table1("table1_right"), SimMode::NoJumpClosedForm),
        ("outage_two_agent", scenario("outage_two_agent"), SimMode::TwoAgentJump),
        ("outage_two_agent/large-n", scenario("outage_two_agent"), SimMode::LargeNApprox),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, s, mode) in cases {
        let tables = solve_tables(&s)?;
        let cfg = EnsembleConfig { mode, seed: SEED, paths: PATHS, keep: 0, fault: None };
        let run = run_ensemble(&pool, &s, &tables, &cfg)?;
        pass &= run.stats.clearing_max < 1e-10 && run.stats.paths == PATHS as u64;
        parts.push(format!("{name} {:.1e}", run.stats.clearing_max));
    }
    Ok((pass, format!("max |sum q| over {PATHS} paths: {}", parts.join(", "))))
}

fn martingale() -> Outcome {
    let pool = pool();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["table1_left", "table1_right"] {
        let s = table1(name);
        let tables = solve_tables(&s)?;
        let cfg = EnsembleConfig { mode: SimMode::NoJumpClosedForm, seed: SEED, paths: PATHS, keep: 0, fault: None };
        let clean = martingale_test(&run_ensemble(&pool, &s, &tables, &cfg)?.stats)?;
        let biased_cfg = EnsembleConfig { fault: Some(Fault::Drift(0.01)), ..cfg };
        let biased = martingale_test(&run_ensemble(&pool, &s, &tables, &biased_cfg)?.stats)?;
        let clean_ok = clean.passes(3.0);
        let detected = biased.max_abs_z() > 3.0;
        pass &= clean_ok && detected;
        parts.push(format!(
            "{name}: clean max |z| {:.2} ({}), fault max |z| {:.2} ({})",
            clean.max_abs_z(),
            if clean_ok { "ok" } else { "drift found" },
            biased.max_abs_z(),
            if detected { "detected" } else { "missed" }
        ));
    }
    Ok((pass, parts.join("; ")))
}

fn volatility_law() -> Outcome {
    let pool = pool();
    let s = scenario("homogeneous");
    let tables = solve_tables(&s)?;
    let analytic = volatility_curve(&s, &compute_weights(&s, &tables)?)?.zeta_sq;
    let cfg = EnsembleConfig { mode: SimMode::NoJumpClosedForm, seed: SEED, paths: PATHS, keep: 0, fault: None };
    let est = realized_volatility(&run_ensemble(&pool, &s, &tables, &cfg)?.stats);
    let err = est.max_relative_error(&analytic, s.horizon, 0.9);
    let zeta0_ok = (analytic[0] - 0.5).abs() < 1e-12;
    Ok((
        err < 0.05 && zeta0_ok,
        format!("zeta_sq(0) analytic {:.12}, empirical {:.4}; max relative error for t <= 0.9T {err:.4}", analytic[0], est.zeta_hat[0]),
    ))
}

fn deterministic_solution() -> Outcome {
    let s = scenario("deterministic_two_agent");
    let tables = solve_tables(&s)?;
    let pool = pool();
    let mut err = 0.0f64;
    for mode in [SimMode::NoJumpClosedForm, SimMode::TwoAgentJump, SimMode::LargeNApprox] {
        let cfg = EnsembleConfig { mode, seed: SEED, paths: 1, keep: 1, fault: None };
        let path = &run_ensemble(&pool, &s, &tables, &cfg)?.kept[0];
        for k in 0..path.nodes() {
            err = err.max((path.price[k] - 5.0).abs()).max((path.rates[0][k] - 5.0 / 3.0).abs());
        }
    }
    let ks = [25, 50, 100, 200];
    let games = ks.iter().map(|&k| discrete_game(&s, k)).collect::<anyhow::Result<Vec<_>>>()?;
    let report = convergence_report(&games, |g| continuous_reference(&s, g.steps, SEED, SimMode::NoJumpClosedForm))?;
    let converges = match report.verdict {
        Verdict::Exact => true,
        Verdict::Converging => report.order.is_some_and(|o| o >= 0.9),
        Verdict::NotDecreasing => false,
    };
    let errs: Vec<String> = report.rows.iter().map(|r| format!("{:.1e}", r.max_err_price)).collect();
    Ok((
        err < 1e-6 && converges,
        format!(
            "max |P - 5|, |q1 - 5/3| = {err:.2e}; oracle errors [{}] verdict {:?} order {:?}",
            errs.join(", "),
            report.verdict,
            report.order
        ),
    ))
}

fn oracle_agreement() -> Outcome {
    let drift = scenario("heterogeneous_drift");
    let mut flat = drift.clone();
    for a in &mut flat.agents {
        a.mu = 0.0;
    }
    let ks = [25, 50, 100, 200];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, s, mode) in [("drift", drift, SimMode::LargeNApprox), ("driftless", flat, SimMode::NoJumpClosedForm)] {
        let games = ks.iter().map(|&k| discrete_game(&s, k)).collect::<anyhow::Result<Vec<_>>>()?;
        let report = convergence_report(&games, |g| continuous_reference(&s, g.steps, SEED, mode))?;
        let decreasing = matches!(report.verdict, Verdict::Exact | Verdict::Converging);
        let last = report.final_price_error();
        pass &= decreasing && last < 5e-2;
        let errs: Vec<String> = report.rows.iter().map(|r| format!("{:.1e}", r.max_err_price)).collect();
        parts.push(format!("{name} [{}] {:?}", errs.join(", "), report.verdict));
    }
    Ok((pass, parts.join("; ")))
}

fn figure_volatility() -> Outcome {
    let left = scenario("table1_left");
    let right = scenario("table1_right");
    let sweep = |s: &MarketScenario, alphas: &[f64]| samuelson_sweep(&s.agents[0], &s.agents[1], alphas, 200, s.horizon, s.grid_steps);
    let l = sweep(&left, &[1.0, 0.115, 0.05, 0.005, 0.0])?;
    let r = sweep(&right, &[1.0, 0.6, 0.5])?;
    use Monotonicity::*;
    let pass = l[0].shape.class == Decreasing
        && !l[0].shape.concave
        && l[1].shape.class == Decreasing
        && l[1].shape.concave
        && l[2].shape.class == NonMonotone
        && l[3].shape.class == Increasing
        && l[4].shape.class == Zero
        && r[0].shape.class == Decreasing
        && r[1].shape.class != Increasing
        && r[2].shape.class == Increasing;
    let describe = |c: &[intraday_eq::core::analysis::SweepCurve]| {
        c.iter().map(|c| format!("{}:{}", c.alpha, c.shape.label())).collect::<Vec<_>>().join(" ")
    };
    Ok((pass, format!("left {}; right {}", describe(&l), describe(&r))))
}

fn figure_jumps() -> Outcome {
    let s = scenario("outage_two_agent");
    let lambdas: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let sweep = parallel_lambda_sweep(&pool(), &s, &lambdas)?;
    let tables = solve_tables(&s)?;
    let model = TwoAgentModel::new(&s, &tables)?;
    let plan = RngPlan::new(SEED, 2);
    let (mut jumps, mut up) = (0usize, 0usize);
    for idx in 0..1000 {
        let chain = simulate_chain(&s.agents[1], s.horizon, &mut plan.chain(idx, 1));
        for j in two_agent_solve(&model, &chain, s.grid(), 4)?.jumps {
            jumps += 1;
            up += usize::from(j.price_after > j.price_before);
        }
    }
    let pass = sweep.p0_increasing && sweep.q2_increasing && sweep.q2_sign_changes == 1 && jumps > 0 && up == jumps;
    let (first, last) = (sweep.rows[0], sweep.rows[sweep.rows.len() - 1]);
    Ok((
        pass,
        format!(
            "P0 {:.3} -> {:.3}, q2_0 {:.3} -> {:.3}, sign changes {}; {up}/{jumps} sampled jumps raise the price",
            first.p0, last.p0, first.q2_0, last.q2_0, sweep.q2_sign_changes
        ),
    ))
}

fn variational() -> Outcome {
    let pool = pool();
    let cases = [
        ("homogeneous", scenario("homogeneous"), SimMode::NoJumpClosedForm),
        ("table1_right", table1("table1_right"), SimMode::NoJumpClosedForm),
        ("outage_two_agent", scenario("outage_two_agent"), SimMode::TwoAgentJump),
    ];
    let mut pass = true;
    let mut tested = 0;
    let mut parts = Vec::new();
    for (name, s, mode) in cases {
        let tables = solve_tables(&s)?;
        let h = s.horizon;
        let bumps: Vec<Bump> = [0.1, -0.1, 1.0, -1.0]
            .into_iter()
            .flat_map(|delta| [Bump { start: 0.0, end: 0.5 * h, delta }, Bump { start: 0.25 * h, end: h, delta }])
            .collect();
        let cfg = EnsembleConfig { mode, seed: SEED, paths: PATHS, keep: 0, fault: None };
        let mut worst = f64::INFINITY;
        let mut ok = true;
        for agent in 0..s.n_agents().min(2) {
            for o in variational_ensemble(&pool, &s, &tables, &cfg, agent, &bumps)? {
                tested += 1;
                ok &= o.passes(2.0);
                let score = if o.se > 0.0 { o.mean_diff / o.se } else { o.mean_diff.signum() * f64::INFINITY };
                worst = worst.min(score);
            }
        }
        pass &= ok;
        parts.push(format!("{name} {} (min {worst:.2} SE)", if ok { "ok" } else { "improvable" }));
    }
    Ok((pass, format!("{tested} bumps; {}", parts.join(", "))))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("riccati matches closed form", riccati_closed_form),
        ("riccati positivity", riccati_positivity),
        ("a equals one minus tail discount", a_identity),
        ("rank-one inverse", rank_one_inverse),
        ("market clearing", clearing),
        ("martingale drift test", martingale),
        ("volatility law", volatility_law),
        ("deterministic exact solution", deterministic_solution),
        ("oracle agreement", oracle_agreement),
        ("volatility shape over type mix", figure_volatility),
        ("switching-rate study", figure_jumps),
        ("variational optimality", variational),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "{} criterion {:>2} {name} ({:.1}s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
