//! Acceptance gate. Every criterion prints one PASS/FAIL line; the test
//! fails if any of them fails.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use dnumkit_core::baseline::{average_unused_capacity, single_period_problem, solve_single_period};
use dnumkit_core::dual_solver::{
    self, aggregate_prices, default_lambda_max, dual_gradient, dual_objective, dual_update, primal_margins,
    primal_rates, project_box, step_size_bound, DualSolverConfig, StepSize,
};
use dnumkit_core::model::{contract_average_delay, max_margin_probe};
use dnumkit_core::mpc::{rolling_solve, CapacityForecaster};
use dnumkit_core::newton::{
    self, dense_dual_matrix, initial_point, solve_direct, solve_splitting, NewtonConfig, StackedProblem,
    StructuredOperator,
};
use dnumkit_core::oracle::grid_oracle;
use dnumkit_core::scenarios::{
    exp1_capacity_means, gen_exp1, gen_exp2_line, gen_exp3_random, tiny_oracle_family,
};
use dnumkit_core::{
    Allocation, DelayFunction, DelaySpec, DualState, Grid, InnerSolver, Scenario, SolveStatus, UtilityFunction,
    UtilitySpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed used for every check on the first experiment.
const EXP1_SEED: u64 = 0;
/// Seeds for the random-topology ordering check.
const EXP3_SEEDS: [u64; 6] = [0, 1, 2, 3, 4, 5];
const EXP3_SHAPE: (usize, usize, usize) = (10, 10, 8);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn run(id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let elapsed = started.elapsed();
    let (mut pass, mut detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    if let Some(limit) = limit {
        if elapsed > limit {
            pass = false;
            detail.push_str(&format!("; runtime over {:.0} s", limit.as_secs_f64()));
        }
    }
    // Written to the raw stream so the lines survive the harness's output capture.
    let _ = writeln!(
        std::io::stderr(),
        "{} criterion {id} ({name}): {detail} [{:.2} s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn max_rel_diff(a: &Grid, b: &Grid) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| {
            let scale = x.abs().max(y.abs());
            if scale == 0.0 {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Worst capacity and contract violations, computed from the raw allocation.
fn violations(sc: &Scenario, alloc: &Allocation) -> (f64, f64) {
    let mut cap = 0.0f64;
    for t in 0..sc.horizon {
        for l in 0..sc.links {
            let load: f64 = (0..sc.sources).filter(|&s| sc.routing[t].uses(l, s)).map(|s| alloc.rates[(s, t)]).sum();
            cap = cap.max(load + alloc.margins[(t, l)] - sc.capacity[(t, l)]);
            cap = cap.max(-alloc.margins[(t, l)]);
        }
    }
    for s in 0..sc.sources {
        for t in 0..sc.horizon {
            cap = cap.max(sc.rate_min[(s, t)] - alloc.rates[(s, t)]).max(alloc.rates[(s, t)] - sc.rate_max[(s, t)]);
        }
    }
    let mut con = 0.0f64;
    for c in &sc.contracts {
        let mut avg = 0.0;
        for &t in &c.window {
            for &l in sc.routing[t].route(c.source) {
                avg += sc.delay_model[l].value(alloc.margins[(t, l)]) / c.window.len() as f64;
            }
        }
        con = con.max(avg - c.bound);
    }
    (cap, con)
}

fn utility(sc: &Scenario, rates: &Grid) -> f64 {
    let mut u = 0.0;
    for s in 0..sc.sources {
        for t in 0..sc.horizon {
            u += sc.utilities[s][t].value(rates[(s, t)]);
        }
    }
    u
}

fn oracle_equivalence() -> Outcome {
    let mut worst_gap = 0.0f64;
    let mut worst_violation = 0.0f64;
    let mut failures = Vec::new();
    let dual_cfg = DualSolverConfig {
        tolerance: dnumkit_core::KktTolerance { contract: 1e-6, ..Default::default() },
        ..Default::default()
    };
    for (v, sc) in tiny_oracle_family().iter().enumerate() {
        let reference = grid_oracle(sc, 1e-3).unwrap();
        let solvers = [InnerSolver::Dual(dual_cfg.clone()), InnerSolver::Newton(NewtonConfig::default())];
        for solver in &solvers {
            let sol = solver.run(sc).unwrap();
            let gap = (utility(sc, &sol.allocation.rates) - reference.utility).abs();
            let (cap, con) = violations(sc, &sol.allocation);
            worst_gap = worst_gap.max(gap);
            worst_violation = worst_violation.max(cap).max(con);
            if gap > 1e-2 || cap > 1e-6 || con > 1e-6 || sol.report.status != SolveStatus::Converged {
                failures.push(format!("variant {v} {}: gap {gap:.2e}, violation {:.2e}", solver.name(), cap.max(con)));
            }
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "max utility gap {worst_gap:.2e} (≤ 1e-2), max violation {worst_violation:.2e} (≤ 1e-6){}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
        ),
    )
}

fn kkt_suite() -> Outcome {
    let sc = gen_exp1(EXP1_SEED);
    let expected_bounds = [(0, 2.0), (0, 1.0), (1, 2.0), (2, 2.0), (3, 2.5)];
    let bounds_ok = sc.contracts.len() == expected_bounds.len()
        && sc.contracts.iter().zip(expected_bounds).all(|(c, (s, d))| c.source == s && c.bound == d);
    let cfg = DualSolverConfig { gamma: StepSize::Fixed(0.01), th: 0.01, ..Default::default() };
    let sol = dual_solver::solve(&sc, &cfg).unwrap();
    let k = sol.report.kkt;
    let worst_contract = sc
        .contracts
        .iter()
        .map(|c| contract_average_delay(&sol.allocation.delays, c) - c.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = bounds_ok
        && sol.report.status == SolveStatus::Converged
        && k.stationarity <= 1e-3
        && k.capacity_violation <= 1e-6
        && k.complementarity <= 1e-3
        && worst_contract <= 1e-3;
    Outcome::new(
        pass,
        format!(
            "seed {EXP1_SEED}: {:?} after {} iterations, stationarity {:.1e}, capacity violation {:.1e}, \
             complementarity {:.1e}, max M_s φ_s − d_s {:.1e}",
            sol.report.status, sol.report.iterations, k.stationarity, k.capacity_violation, k.complementarity, worst_contract
        ),
    )
}

fn degeneration() -> Outcome {
    let sc = gen_exp1(EXP1_SEED);
    let plain = sc.without_contracts();
    let cfg = DualSolverConfig::default();
    let free = dual_solver::solve(&plain, &cfg).unwrap();
    let reference = newton::solve(&plain, &NewtonConfig::default()).unwrap();
    let with = dual_solver::solve(&sc, &cfg).unwrap();
    let max_margin = free.allocation.margins.max();
    let num_diff = max_rel_diff(&free.allocation.rates, &reference.allocation.rates);
    let tail_diff = (8..10)
        .flat_map(|t| (0..sc.sources).map(move |s| (s, t)))
        .map(|(s, t)| {
            let (a, b) = (with.allocation.rates[(s, t)], free.allocation.rates[(s, t)]);
            (a - b).abs() / a.abs().max(b.abs())
        })
        .fold(0.0, f64::max);
    let pass = free.report.status == SolveStatus::Converged
        && with.report.status == SolveStatus::Converged
        && max_margin <= 1e-4
        && num_diff <= 1e-2
        && tail_diff <= 1e-2;
    Outcome::new(
        pass,
        format!(
            "no-contract margins ≤ {max_margin:.1e}, vs plain NUM rel {num_diff:.1e}, periods 9-10 with vs without contracts rel {tail_diff:.1e}"
        ),
    )
}

fn convergence_speed() -> Outcome {
    let sc = gen_exp1(EXP1_SEED);
    let dual = dual_solver::solve(&sc, &DualSolverConfig::default()).unwrap();
    let newton = newton::solve(&sc, &NewtonConfig::default()).unwrap();
    let tol = DualSolverConfig::default().tolerance;
    let matched = dual.report.kkt.within(&tol) && newton.report.kkt.within(&tol);
    let (n, d) = (newton.report.iterations, dual.report.iterations);
    let pass = matched
        && dual.report.status == SolveStatus::Converged
        && newton.report.status == SolveStatus::Converged
        && 3 * n <= d;
    Outcome::new(
        pass,
        format!(
            "Newton {n} steps vs dual {d} iterations to the same KKT tolerance (ratio {:.0}); th rule alone met at iteration {}",
            d as f64 / n as f64,
            dual.th_iterations.map_or("never".to_string(), |i| i.to_string())
        ),
    )
}

fn cross_solver_agreement() -> Outcome {
    let sc = gen_exp1(EXP1_SEED);
    let dual = dual_solver::solve(&sc, &DualSolverConfig::default()).unwrap();
    let newton = newton::solve(&sc, &NewtonConfig::default()).unwrap();
    let diff = max_rel_diff(&dual.allocation.rates, &newton.allocation.rates);
    let pass = newton.gap <= 1e-4 && dual.report.status == SolveStatus::Converged && diff <= 1e-2;
    Outcome::new(pass, format!("barrier gap {:.1e}, max relative rate difference {diff:.2e}", newton.gap))
}

fn mpc_gap() -> Outcome {
    let sc = gen_exp1(EXP1_SEED);
    let cfg = NewtonConfig::default();
    let inner = InnerSolver::Newton(cfg.clone());
    let clairvoyant = newton::solve(&sc, &cfg).unwrap();
    let oneshot = utility(&sc, &clairvoyant.allocation.rates);
    let forecaster = CapacityForecaster::ConstantMean { values: exp1_capacity_means() };
    let rolling = rolling_solve(&sc, &sc.capacity, &forecaster, &inner).unwrap();
    let ratio = rolling.utility / oneshot;
    let exact = CapacityForecaster::Exact { capacities: sc.capacity.clone() };
    let replay = rolling_solve(&sc, &sc.capacity, &exact, &inner).unwrap();
    // The one-shot solve and each of the T rolling solves stop within gap_tol of their optimum.
    let tolerance = (sc.horizon + 1) as f64 * cfg.gap_tol;
    let exact_gap = (oneshot - replay.utility).abs();
    let (cap, con) = violations(&sc, &rolling.allocation);
    let pass = ratio >= 0.95
        && exact_gap <= tolerance
        && !rolling.any_fallback()
        && !replay.any_fallback()
        && cap <= 1e-6
        && con <= 1e-3;
    Outcome::new(
        pass,
        format!(
            "rolling {:.4} / clairvoyant {oneshot:.4} = {ratio:.4} (≥ 0.95); exact-forecast gap {exact_gap:.1e} (≤ {tolerance:.1e})",
            rolling.utility
        ),
    )
}

fn feasibility_widening() -> Outcome {
    let sc = gen_exp2_line(20, 18, 10, 0).unwrap();
    let inner = InnerSolver::default();
    let baseline = solve_single_period(&sc, &inner).unwrap();
    let probe_rejects_period_2 = max_margin_probe(&single_period_problem(&sc, 1)).is_err();
    let mut notes = Vec::new();
    let mut multi_ok = true;
    for solver in [InnerSolver::Newton(NewtonConfig::default()), InnerSolver::Dual(DualSolverConfig::default())] {
        let sol = solver.run(&sc).unwrap();
        let (cap, con) = violations(&sc, &sol.allocation);
        let ok = sol.report.status == SolveStatus::Converged && cap <= 1e-6 && con <= 1e-3;
        multi_ok &= ok;
        notes.push(format!("{} {:?}, contract excess {con:.1e}", solver.name(), sol.report.status));
    }
    let pass = baseline.infeasible_periods == vec![1] && probe_rejects_period_2 && multi_ok;
    Outcome::new(
        pass,
        format!(
            "per-period infeasible periods (1-based) {:?}; multi-period: {}",
            baseline.infeasible_periods.iter().map(|t| t + 1).collect::<Vec<_>>(),
            notes.join("; ")
        ),
    )
}

struct Exp3Row {
    seed: u64,
    dual_unused: f64,
    baseline_unused: f64,
    newton_unused: f64,
    rate_rel: f64,
    status: SolveStatus,
}

fn utilization_ordering() -> Outcome {
    let (s, l, t) = EXP3_SHAPE;
    // γ = 0.01 cycles on this topology: links left slack by the bottlenecks
    // carry a price of order 1e-5, so the step is scaled down accordingly.
    let cfg = DualSolverConfig { gamma: StepSize::Fixed(3e-5), max_iters: 1_000_000, ..Default::default() };
    let rows: Vec<Exp3Row> = std::thread::scope(|scope| {
        let handles: Vec<_> = EXP3_SEEDS
            .iter()
            .map(|&seed| {
                let cfg = cfg.clone();
                scope.spawn(move || {
                    let sc = gen_exp3_random(s, l, t, seed).unwrap();
                    let dual = dual_solver::solve(&sc, &cfg).unwrap();
                    let newton = newton::solve(&sc, &NewtonConfig::default()).unwrap();
                    let baseline = solve_single_period(&sc, &InnerSolver::default()).unwrap();
                    assert!(baseline.all_feasible(), "seed {seed}: per-period baseline infeasible");
                    Exp3Row {
                        seed,
                        dual_unused: average_unused_capacity(&sc, &dual.allocation.rates),
                        baseline_unused: average_unused_capacity(&sc, &baseline.allocation.rates),
                        newton_unused: average_unused_capacity(&sc, &newton.allocation.rates),
                        rate_rel: max_rel_diff(&dual.allocation.rates, &newton.allocation.rates),
                        status: dual.report.status,
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let pass = rows.iter().all(|r| r.dual_unused <= r.baseline_unused && r.rate_rel <= 1e-2);
    let detail = rows
        .iter()
        .map(|r| {
            format!(
                "seed {}: {:.4} vs {:.4} (Newton {:.4}, rates rel {:.1e}, {:?})",
                r.seed, r.dual_unused, r.baseline_unused, r.newton_unused, r.rate_rel, r.status
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Outcome::new(pass, format!("DA-DNUM vs per-period unused capacity, {detail}"))
}

fn central_difference(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-5 * x.abs().max(1e-3);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn finite_differences() -> Result<(), String> {
    let utilities = [UtilitySpec::Log, UtilitySpec::WeightedLog { weight: 2.5 }, UtilitySpec::WeightedLog { weight: 0.3 }];
    let delays = [DelaySpec::Mm1 { q: 1.0 }, DelaySpec::Mm1 { q: 0.5 }, DelaySpec::Mm1 { q: 3.0 }];
    let points = [0.05, 0.2, 0.7, 1.0, 3.3, 9.0, 20.0];
    let check = |what: &str, analytic: f64, numeric: f64| -> Result<(), String> {
        let rel = (analytic - numeric).abs() / analytic.abs().max(1e-300);
        if rel <= 1e-6 {
            Ok(())
        } else {
            Err(format!("{what}: analytic {analytic} vs numeric {numeric}"))
        }
    };
    for u in &utilities {
        for &x in &points {
            check("U'", u.deriv(x), central_difference(|v| u.value(v), x))?;
            check("U''", u.second_deriv(x), central_difference(|v| u.deriv(v), x))?;
        }
    }
    for d in &delays {
        for &x in &points {
            check("D'", d.deriv(x), central_difference(|v| d.value(v), x))?;
            check("D''", d.second_deriv(x), central_difference(|v| d.deriv(v), x))?;
        }
    }
    Ok(())
}

/// Small random instance with capacities and rate boxes of order one, so
/// that `1/Q` is large enough for per-step changes to be resolved.
fn small_random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let (s, l, t) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(2..=3));
    let mut sc = gen_exp3_random(s, l, t, rng.gen()).unwrap();
    sc.capacity = Grid::from_fn(t, l, |_, _| rng.gen_range(1.0..3.0));
    sc.rate_min = Grid::filled(s, t, 0.2);
    sc.rate_max = Grid::filled(s, t, 3.0);
    for c in &mut sc.contracts {
        c.bound = rng.gen_range(1.0..4.0);
    }
    sc
}

/// Projected dual steps with γ = 1/Q never raise the dual objective.
fn dual_monotonicity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut smallest_decrease = f64::INFINITY;
    for case in 0..10 {
        let sc = small_random_scenario(&mut rng);
        let lambda_max = default_lambda_max(&sc);
        let mu_min = 0.5;
        let gamma = 1.0 / step_size_bound(&sc, lambda_max, mu_min).unwrap();
        let mut dual = DualState::uniform(&sc, 1.0);
        let mut g = dual_objective(&dual, &sc);
        let start = g;
        for j in 0..2000 {
            let prices = aggregate_prices(&dual, &sc);
            let rates = primal_rates(&prices, &sc);
            let margins = primal_margins(&dual, &prices, &sc);
            dual = dual_update(&dual, &dual_gradient(&rates, &margins, &sc), gamma);
            project_box(&mut dual, lambda_max, mu_min);
            let next = dual_objective(&dual, &sc);
            // Rounding in the objective sum is the only allowance.
            if next > g + 1e-14 * g.abs().max(1.0) {
                return Err(format!("case {case}, step {j}: dual objective rose from {g} to {next}"));
            }
            g = next;
        }
        smallest_decrease = smallest_decrease.min((start - g) / start.abs().max(1.0));
    }
    if smallest_decrease <= 1e-9 {
        return Err(format!("objective barely moved (relative decrease {smallest_decrease:.1e})"));
    }
    Ok(format!("smallest relative decrease over 2000 steps {smallest_decrease:.1e}"))
}

/// Splitting and dense solves of the Newton dual system on every instance
/// with at most 500 constraint rows.
fn splitting_vs_direct() -> Result<String, String> {
    let mut instances: Vec<(String, Scenario)> =
        tiny_oracle_family().into_iter().enumerate().map(|(v, sc)| (format!("tiny {v}"), sc)).collect();
    instances.push(("exp1".into(), gen_exp1(EXP1_SEED)));
    instances.push(("exp2".into(), gen_exp2_line(20, 18, 10, 0).unwrap()));
    for seed in 0..2 {
        let (s, l, t) = EXP3_SHAPE;
        instances.push((format!("exp3 seed {seed}"), gen_exp3_random(s, l, t, seed).unwrap()));
    }
    let mut checked = 0;
    let mut worst = 0.0f64;
    for (name, sc) in &instances {
        for beta in [1.0, 1e-2] {
            let p = StackedProblem::assemble(sc, beta).map_err(|e| e.to_string())?;
            if p.n_rows() > 500 {
                continue;
            }
            let Ok(z) = initial_point(&p) else { continue };
            let inv_h = p.inverse_hessian(&z).map_err(|e| e.to_string())?;
            let jac = p.jacobian(&z);
            let grad = p.gradient(&z);
            let hg: Vec<f64> = inv_h.iter().zip(&grad).map(|(h, g)| h * g).collect();
            let rhs: Vec<f64> = p.apply_a(&jac, &hg).iter().map(|v| -v).collect();
            let op = StructuredOperator::new(&p, &inv_h, &jac);
            let split = solve_splitting(&op, &rhs, &vec![0.0; p.n_rows()], 5_000_000, 1e-15, false)
                .map_err(|e| e.to_string())?;
            let direct = solve_direct(&dense_dual_matrix(&p.constraint_matrix(&jac), &inv_h), &rhs)
                .map_err(|e| e.to_string())?;
            let scale = direct.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let err = split.omega.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
            worst = worst.max(err);
            if err > 1e-8 {
                return Err(format!("{name}, β = {beta}: difference {err:.2e} after {} iterations", split.iterations));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} systems, max scaled difference {worst:.1e}"))
}

/// Committed decisions never depend on capacities revealed later.
fn mpc_causality() -> Result<String, String> {
    let sc = gen_exp1(EXP1_SEED);
    let inner = InnerSolver::default();
    let forecasters = [
        CapacityForecaster::ConstantMean { values: exp1_capacity_means() },
        CapacityForecaster::RunningAverage { window: 3 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut replays = 0;
    for forecaster in &forecasters {
        let base = rolling_solve(&sc, &sc.capacity, forecaster, &inner).map_err(|e| e.to_string())?;
        for tau in 0..sc.horizon - 1 {
            let mut stream = sc.capacity.clone();
            for t in tau + 1..sc.horizon {
                for l in 0..sc.links {
                    stream[(t, l)] *= rng.gen_range(0.8..1.25);
                }
            }
            let other = rolling_solve(&sc, &stream, forecaster, &inner).map_err(|e| e.to_string())?;
            for t in 0..=tau {
                let (a, b) = (&base.steps[t], &other.steps[t]);
                if a.committed_rates != b.committed_rates || a.committed_margins != b.committed_margins {
                    return Err(format!("period {} changed after perturbing periods > {}", t + 1, tau + 1));
                }
            }
            replays += 1;
        }
    }
    Ok(format!("{replays} perturbed replays"))
}

fn property_suites() -> Outcome {
    let parts = [
        ("finite differences", finite_differences().map(|_| "ok".to_string())),
        ("dual monotonicity", dual_monotonicity()),
        ("splitting vs direct", splitting_vs_direct()),
        ("MPC causality", mpc_causality()),
    ];
    let pass = parts.iter().all(|(_, r)| r.is_ok());
    let detail = parts
        .iter()
        .map(|(name, r)| match r {
            Ok(s) => format!("{name}: {s}"),
            Err(e) => format!("{name} FAILED: {e}"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    Outcome::new(pass, detail)
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    let results = [
        run(1, "oracle equivalence", Some(secs(10)), oracle_equivalence),
        run(2, "KKT suite", Some(secs(30)), kkt_suite),
        run(3, "degeneration", None, degeneration),
        run(4, "convergence-speed ordering", Some(secs(60)), convergence_speed),
        run(5, "cross-solver agreement", None, cross_solver_agreement),
        run(6, "MPC gap", None, mpc_gap),
        run(7, "feasibility widening", Some(secs(60)), feasibility_widening),
        run(8, "utilization ordering", None, utilization_ordering),
        run(9, "property suites", None, property_suites),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, p)| !**p).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
