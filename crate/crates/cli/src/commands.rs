use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use dnumkit_core::dual_solver::{self, DualSolverConfig, StepSize};
use dnumkit_core::model::ConstraintSlack;
use dnumkit_core::mpc::{rolling_solve, CapacityForecaster, MpcStep};
use dnumkit_core::newton::{self, DualSystemSolver, NewtonConfig};
use dnumkit_core::oracle::{self, grid_oracle, kkt_check, recover_duals};
use dnumkit_core::scenarios::{exp1_capacity_means, ExperimentKind, ExperimentSpec, ScenarioFile};
use dnumkit_core::solver::infeasible;
use dnumkit_core::{Error, InnerSolver, KktTolerance, Scenario, Solution, SolveReport, SolveStatus};
use serde_json::json;

use crate::args::{
    CompareArgs, ForecastKind, Gamma, GenArgs, Generator, MpcArgs, ScenarioSource, SolveArgs, SolverArgs,
    SolverKind, ValidateArgs,
};
use crate::output::{read_grid, write_allocation, write_json, write_trace, ResultsFile};
use crate::{Failure, Status};

fn core_failure(e: Error) -> Failure {
    match e {
        Error::InvalidScenario(v) => {
            Failure::Invalid(v.iter().map(|x| format!("invalid: {x}")).collect::<Vec<_>>().join("\n"))
        }
        Error::InvalidParameter { .. } | Error::InstanceTooLarge { .. } | Error::NonPositiveDualFloor(_) => {
            Failure::Usage(e.to_string())
        }
        other => Failure::Runtime(other.into()),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn parse_scenario_file(path: &Path) -> Result<ScenarioFile, Failure> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::Invalid(format!("invalid: {}: {e}", path.display())))
}

fn experiment_spec(source: &ScenarioSource, generator: Generator) -> ExperimentSpec {
    let size = |v: Option<u64>, default: usize| v.map_or(default, |v| v as usize);
    let kind = match generator {
        Generator::Exp1 => ExperimentKind::Exp1,
        Generator::Exp2 => {
            let (l, s, t) = if source.full { (200, 198, 50) } else { (20, 18, 10) };
            ExperimentKind::Exp2Line {
                links: size(source.links, l),
                sources: size(source.sources, s),
                horizon: size(source.horizon, t),
            }
        }
        Generator::Exp3 => {
            let (s, l, t) = if source.full { (20, 20, 20) } else { (10, 10, 8) };
            ExperimentKind::Exp3Random {
                sources: size(source.sources, s),
                links: size(source.links, l),
                horizon: size(source.horizon, t),
            }
        }
        Generator::Tiny => ExperimentKind::TinyOracle { variant: source.variant },
    };
    ExperimentSpec { kind, seed: source.seed, overrides: None }
}

/// The scenario and the generator spec it came from, if any.
fn load_scenario(source: &ScenarioSource) -> Result<(Scenario, Option<ExperimentSpec>), Failure> {
    if let Some(path) = &source.scenario {
        let sc = parse_scenario_file(path)?.to_scenario().map_err(core_failure)?;
        return Ok((sc, None));
    }
    let spec = match (&source.gen, &source.spec) {
        (Some(g), _) => experiment_spec(source, *g),
        (None, Some(path)) => serde_json::from_str::<ExperimentSpec>(&read_text(path)?)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
        (None, None) => return Err(Failure::Usage("one of --scenario, --gen or --spec is required".into())),
    };
    let sc = spec.build().map_err(core_failure)?;
    Ok((sc, Some(spec)))
}

fn tolerance(args: &SolverArgs) -> KktTolerance {
    let mut tol = KktTolerance::default();
    if let Some(t) = args.tolerance {
        tol.stationarity = t;
        tol.contract = t;
        tol.complementarity = t;
    }
    if let Some(t) = args.capacity_tolerance {
        tol.capacity = t;
    }
    tol
}

fn dual_config(args: &SolverArgs, trace: bool) -> DualSolverConfig {
    let mut cfg = DualSolverConfig { record_trace: trace, tolerance: tolerance(args), ..Default::default() };
    if let Some(g) = args.gamma {
        cfg.gamma = match g {
            Gamma::Fixed(v) => StepSize::Fixed(v),
            Gamma::Auto => StepSize::Auto,
        };
    }
    if let Some(th) = args.th {
        cfg.th = th;
    }
    if let Some(n) = args.max_iters {
        cfg.max_iters = n as usize;
    }
    if let Some(m) = args.mu_min {
        cfg.mu_min = m;
    }
    cfg.lambda_max = args.lambda_max;
    cfg.adaptive = args.adaptive;
    cfg.box_projection = args.box_projection;
    cfg
}

fn newton_config(args: &SolverArgs, trace: bool) -> NewtonConfig {
    let mut cfg = NewtonConfig { record_trace: trace, tolerance: tolerance(args), ..Default::default() };
    if let Some(b) = args.beta0 {
        cfg.beta0 = b;
    }
    if let Some(g) = args.gap_tol {
        cfg.gap_tol = g;
    }
    if let Some(n) = args.max_iters {
        cfg.max_total_steps = n as usize;
    }
    if args.direct {
        cfg.dual_system = DualSystemSolver::Direct;
    }
    cfg
}

fn inner_solver(args: &SolverArgs) -> Result<InnerSolver, Failure> {
    match args.solver {
        SolverKind::Dual => Ok(InnerSolver::Dual(dual_config(args, false))),
        SolverKind::Newton => Ok(InnerSolver::Newton(newton_config(args, false))),
        SolverKind::Oracle => Err(Failure::Usage("the oracle cannot be used as an inner solver".into())),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Runtime)
}

fn run_oracle(sc: &Scenario, resolution: f64) -> Result<(Solution, serde_json::Value), Failure> {
    match grid_oracle(sc, resolution) {
        Ok(res) => {
            let dual = recover_duals(sc, &res.allocation, 1e-9);
            let kkt = kkt_check(sc, &res.allocation, &dual);
            let report = SolveReport {
                solver: "oracle".into(),
                status: SolveStatus::Converged,
                converged: true,
                iterations: res.evaluated,
                objective: res.utility,
                kkt,
                slack: ConstraintSlack::of(sc, &res.allocation),
                wall_time: None,
                notes: vec![format!("grid resolution {resolution}")],
                trace: vec![],
            };
            let details = json!({ "evaluated": res.evaluated, "resolution": resolution });
            Ok((Solution { allocation: res.allocation, dual, report }, details))
        }
        Err(Error::NoFeasiblePoint) => {
            Ok((infeasible(sc, "oracle", "no grid point satisfies the constraints".into()), serde_json::Value::Null))
        }
        Err(e) => Err(core_failure(e)),
    }
}

pub fn solve(args: &SolveArgs) -> Result<Status, Failure> {
    let (sc, _) = load_scenario(&args.source)?;
    ensure_dir(&args.out)?;
    let started = Instant::now();
    let (mut solution, details) = match args.solver.solver {
        SolverKind::Dual => {
            let s = dual_solver::solve(&sc, &dual_config(&args.solver, args.trace)).map_err(core_failure)?;
            let details = json!({ "gamma": s.gamma, "th_iterations": s.th_iterations });
            (Solution { allocation: s.allocation, dual: s.dual, report: s.report }, details)
        }
        SolverKind::Newton => match newton::solve(&sc, &newton_config(&args.solver, args.trace)) {
            Ok(s) => {
                let details = json!({ "stages": s.stages, "direct_fallbacks": s.direct_fallbacks, "gap": s.gap });
                (Solution { allocation: s.allocation, dual: s.dual, report: s.report }, details)
            }
            Err(Error::CannotInitialize(reason)) => (infeasible(&sc, "newton", reason), serde_json::Value::Null),
            Err(e) => return Err(core_failure(e)),
        },
        SolverKind::Oracle => run_oracle(&sc, args.solver.resolution)?,
    };
    solution.report.wall_time = args.timing.then(|| started.elapsed().as_secs_f64());
    if args.trace {
        write_trace(&args.out.join("trace.csv"), &solution.report.trace)?;
    }
    solution.report.trace.clear();

    let status = solution.report.status;
    let results = ResultsFile {
        solver: solution.report.solver.clone(),
        kkt: solution.report.kkt,
        allocation: solution.allocation,
        dual: Some(solution.dual),
        report: solution.report,
        details,
        scenario: ScenarioFile::from_scenario(&sc),
    };
    write_json(&args.out.join("results.json"), &results)?;
    write_allocation(&args.out, &results.allocation)?;
    println!(
        "{}: {:?} after {} iterations, utility {:.6}",
        results.solver, status, results.report.iterations, results.report.objective
    );
    Ok(if status == SolveStatus::Converged { Status::Ok } else { Status::NotConverged })
}

pub fn mpc(args: &MpcArgs) -> Result<Status, Failure> {
    let (sc, spec) = load_scenario(&args.source)?;
    let inner = inner_solver(&args.solver)?;
    let stream = match &args.stream {
        Some(path) => read_grid(path).map_err(|e| Failure::Usage(format!("{e:#}")))?,
        None => sc.capacity.clone(),
    };
    if stream.shape() != (sc.horizon, sc.links) {
        return Err(Failure::Usage(format!(
            "capacity stream has {} periods × {} links, scenario needs {} × {}",
            stream.rows(),
            stream.cols(),
            sc.horizon,
            sc.links
        )));
    }
    let forecaster = match args.forecast {
        ForecastKind::Mean => {
            let values = match (&args.means, spec.map(|s| s.kind)) {
                (Some(v), _) => v.clone(),
                (None, Some(ExperimentKind::Exp1)) => exp1_capacity_means(),
                (None, _) => return Err(Failure::Usage("--forecast mean needs --means for this scenario".into())),
            };
            if values.len() != sc.links {
                return Err(Failure::Usage(format!("--means has {} values for {} links", values.len(), sc.links)));
            }
            CapacityForecaster::ConstantMean { values }
        }
        ForecastKind::Running => {
            if args.window == 0 {
                return Err(Failure::Usage("--window must be positive".into()));
            }
            CapacityForecaster::RunningAverage { window: args.window }
        }
        ForecastKind::Exact => CapacityForecaster::Exact { capacities: stream.clone() },
    };
    ensure_dir(&args.out)?;
    let outcome = rolling_solve(&sc, &stream, &forecaster, &inner).map_err(core_failure)?;

    let mut log = String::new();
    for step in &outcome.steps {
        log.push_str(&serde_json::to_string(&one_based_step(step)).map_err(|e| Failure::Runtime(e.into()))?);
        log.push('\n');
    }
    let log_path = args.out.join("mpc.jsonl");
    fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;

    let clairvoyant = if args.clairvoyant {
        let realized = Scenario { capacity: stream.clone(), ..sc.clone() };
        let sol = inner.run(&realized).map_err(core_failure)?;
        Some(json!({
            "utility": sol.report.objective,
            "status": sol.report.status,
            "ratio": outcome.utility / sol.report.objective,
        }))
    } else {
        None
    };
    let summary = json!({
        "solver": inner.name(),
        "forecaster": forecaster,
        "utility": outcome.utility,
        "contract_averages": outcome.contract_averages,
        "fallback_periods": outcome.steps.iter().filter(|s| s.fallback).map(|s| s.period).collect::<Vec<_>>(),
        "clairvoyant": clairvoyant,
        "allocation": outcome.allocation,
    });
    write_json(&args.out.join("results.json"), &summary)?;
    write_allocation(&args.out, &outcome.allocation)?;
    println!("mpc: utility {:.6} over {} periods", outcome.utility, outcome.steps.len());
    if let Some(c) = &clairvoyant {
        println!("clairvoyant utility {:.6}, ratio {:.4}", c["utility"], c["ratio"]);
    }
    let clean = outcome.steps.iter().all(|s| !s.fallback && s.status == SolveStatus::Converged);
    Ok(if clean { Status::Ok } else { Status::NotConverged })
}

/// Log line for one MPC step with contract and period indices shifted to 1-based.
fn one_based_step(step: &MpcStep) -> serde_json::Value {
    let shift = |v: &[usize]| v.iter().map(|i| i + 1).collect::<Vec<_>>();
    json!({
        "period": step.period,
        "status": step.status,
        "iterations": step.iterations,
        "fallback": step.fallback,
        "flags": step.flags,
        "expired": shift(&step.expired),
        "residuals": step.residuals.iter().map(|r| json!({
            "contract": r.contract + 1,
            "weighted_residual": r.weighted_residual,
            "remaining": shift(&r.remaining),
        })).collect::<Vec<_>>(),
        "committed_rates": step.committed_rates,
        "committed_margins": step.committed_margins,
    })
}

fn read_results(path: &Path) -> Result<ResultsFile, Failure> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::Usage(format!("{}: not a results file: {e}", path.display())))
}

pub fn compare(args: &CompareArgs) -> Result<Status, Failure> {
    let a = read_results(&args.a)?;
    let b = read_results(&args.b)?;
    let sc = match &args.scenario {
        Some(path) => parse_scenario_file(path)?.to_scenario().map_err(core_failure)?,
        None => a.scenario.to_scenario().map_err(core_failure)?,
    };
    let diff = oracle::compare(&a.allocation, &b.allocation, Some(&sc)).map_err(|e| Failure::Usage(e.to_string()))?;
    let report = json!({ "a": a.solver, "b": b.solver, "diff": diff });
    match &args.out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.into()))?),
    }
    Ok(Status::Ok)
}

pub fn validate(args: &ValidateArgs) -> Result<Status, Failure> {
    let sc = parse_scenario_file(&args.scenario)?.to_scenario().map_err(core_failure)?;
    println!(
        "ok: {} periods, {} links, {} sources, {} contracts",
        sc.horizon,
        sc.links,
        sc.sources,
        sc.contracts.len()
    );
    if let Err(reason) = dnumkit_core::model::max_margin_probe(&sc) {
        println!("note: no feasible allocation exists ({reason})");
    }
    Ok(Status::Ok)
}

pub fn gen(args: &GenArgs) -> Result<Status, Failure> {
    let (sc, _) = load_scenario(&args.source)?;
    let text = dnumkit_core::scenarios::to_json(&sc) + "\n";
    match &args.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(Status::Ok)
}
