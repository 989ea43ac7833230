//! Barrier Newton method with a splitting-based dual solve.
//!
//! Inequalities are turned into equalities with slack variables and a
//! logarithmic barrier with coefficient `β`. Each Newton step solves the
//! dual system `A H⁻¹ Aᵀ ω = r − A H⁻¹ ∇f` (iteratively by default), moves
//! along `Δz = −H⁻¹(∇f + Aᵀω)` with a backtracking line search, and `β` is
//! reduced geometrically between centering stages.

pub mod splitting;
pub mod stacked;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dual_solver::dual_objective;
use crate::error::{Error, Result};
use crate::model::{
    validate, Allocation, ConstraintSlack, DualState, KktTolerance, Scenario, SolveReport, SolveStatus, TraceRow,
};
use crate::oracle::kkt_check;
pub use splitting::{
    dense_dual_matrix, dual_splitting_step, solve_direct, solve_splitting, splitting_diagonal, DenseOperator,
    DualOperator, SplittingOutcome, StructuredOperator,
};
pub use stacked::{DelayRow, StackedProblem};

/// Fraction of the distance to the boundary a step may cover.
pub const BOUNDARY_FACTOR: f64 = 0.99;
pub const ARMIJO: f64 = 1e-4;
/// Steps shorter than this are rejected.
pub const MIN_STEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualSystemSolver {
    /// Matrix splitting, falling back to the dense solve when the result
    /// is not a descent direction.
    Splitting,
    /// Dense Cholesky.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub beta0: f64,
    pub beta_factor: f64,
    /// Stop once `barrier terms × β` is at most this.
    pub gap_tol: f64,
    /// A stage ends when half the squared Newton decrement drops below this.
    pub centering_tol: f64,
    pub max_steps_per_stage: usize,
    pub max_total_steps: usize,
    pub inner_max_iters: usize,
    pub inner_tol: f64,
    pub dual_system: DualSystemSolver,
    /// Include the delay-row curvature in the margin block of the Hessian.
    pub curvature: bool,
    pub record_trace: bool,
    pub tolerance: KktTolerance,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            beta0: 1.0,
            beta_factor: 0.2,
            gap_tol: 1e-4,
            centering_tol: 1e-9,
            max_steps_per_stage: 60,
            max_total_steps: 2000,
            inner_max_iters: 200,
            inner_tol: 1e-8,
            dual_system: DualSystemSolver::Splitting,
            curvature: true,
            record_trace: false,
            tolerance: KktTolerance::default(),
        }
    }
}

/// State at the end of one barrier stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub beta: f64,
    pub steps: usize,
    pub barrier_objective: f64,
    pub slack: ConstraintSlack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonSolution {
    pub allocation: Allocation,
    pub dual: DualState,
    pub report: SolveReport,
    pub stages: Vec<StageSummary>,
    /// Directions recomputed with the dense solve after the splitting
    /// result failed the descent test.
    pub direct_fallbacks: usize,
    /// Final `barrier terms × β`.
    pub gap: f64,
}

/// Largest `δ ≤ 1` with `lower < v + δ·d < upper` scaled by `factor`.
pub fn fraction_to_boundary(values: &[f64], direction: &[f64], lower: &[f64], upper: &[f64], factor: f64) -> f64 {
    let mut limit = f64::INFINITY;
    for i in 0..values.len() {
        let d = direction[i];
        if d < 0.0 && lower[i].is_finite() {
            limit = limit.min((values[i] - lower[i]) / -d);
        } else if d > 0.0 && upper[i].is_finite() {
            limit = limit.min((upper[i] - values[i]) / d);
        }
    }
    (factor * limit).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearch {
    pub step: f64,
    pub z: Vec<f64>,
    pub objective: f64,
}

/// Backtracking from the fraction-to-boundary step with sufficient
/// decrease. Slack entries of the trial point are recomputed from its rates
/// and margins, so every trial is exactly feasible. `None` when the step
/// underflows [`MIN_STEP`].
pub fn line_search(p: &StackedProblem, z: &[f64], dz: &[f64], f0: f64, slope: f64) -> Option<LineSearch> {
    let (lower, upper) = bounds(p);
    let mut step = fraction_to_boundary(z, dz, &lower, &upper, BOUNDARY_FACTOR);
    let split = p.n_rates() + p.n_cells();
    // Rounding in f limits how small a decrease can be resolved.
    let noise = 8.0 * f64::EPSILON * f0.abs().max(1.0);
    while step >= MIN_STEP {
        let trial: Vec<f64> = z[..split].iter().zip(&dz[..split]).map(|(v, d)| v + step * d).collect();
        if let Some(zn) = p.complete(&trial[..p.n_rates()], &trial[p.n_rates()..]) {
            let f = p.objective(&zn);
            if f <= f0 + ARMIJO * step * slope + noise {
                return Some(LineSearch { step, z: zn, objective: f });
            }
        }
        step *= 0.5;
    }
    None
}

fn bounds(p: &StackedProblem) -> (Vec<f64>, Vec<f64>) {
    let mut lower = vec![0.0; p.dim()];
    let mut upper = vec![f64::INFINITY; p.dim()];
    for i in 0..p.n_rates() {
        let (lo, hi) = p.rate_bounds(i);
        if hi > lo {
            lower[i] = lo;
            upper[i] = hi;
        } else {
            lower[i] = f64::NEG_INFINITY;
        }
    }
    (lower, upper)
}

/// Strictly interior start: rates just above their minimum, margins a
/// fraction `θ` of the leftover capacity for the first `θ` that makes every
/// delay slack positive.
pub fn initial_point(p: &StackedProblem) -> Result<Vec<f64>> {
    let mut last_error = String::new();
    for eps in [1e-2, 1e-4, 1e-6] {
        let x: Vec<f64> = (0..p.n_rates())
            .map(|i| {
                let (lo, hi) = p.rate_bounds(i);
                if hi > lo {
                    lo + eps * (hi - lo)
                } else {
                    lo
                }
            })
            .collect();
        let mut headroom = Vec::with_capacity(p.n_cells());
        let mut blocked = None;
        for cell in 0..p.n_cells() {
            let load: f64 = p.users()[cell].iter().map(|&i| x[i]).sum();
            let h = p.capacity(cell) - load;
            if h <= 0.0 {
                blocked = Some(cell);
            }
            headroom.push(h);
        }
        if let Some(cell) = blocked {
            last_error = format!(
                "capacity of link {} in period {} is exhausted by minimum rates",
                cell % p.links + 1,
                cell / p.links + 1
            );
            continue;
        }
        for theta in [0.5, 0.9, 0.99, 0.999] {
            let sigma: Vec<f64> = headroom.iter().map(|h| theta * h).collect();
            if let Some(z) = p.complete(&x, &sigma) {
                return Ok(z);
            }
        }
        let sigma: Vec<f64> = headroom.iter().map(|h| 0.999 * h).collect();
        let delays = p.delay_map(&sigma);
        let rhs = p.rhs();
        if let Some(r) = (0..p.contracts).find(|&r| delays[r] >= rhs[p.n_cells() + r]) {
            last_error = format!(
                "contract {} of source {} needs average delay {:.6} but the largest margins give {:.6}",
                p.contract_of_row(r) + 1,
                p.contract_source(r + 1),
                rhs[p.n_cells() + r],
                delays[r]
            );
        }
    }
    Err(Error::CannotInitialize(last_error))
}

struct Direction {
    dz: Vec<f64>,
    omega: Vec<f64>,
    slope: f64,
    decrement_sq: f64,
    inner: usize,
    fallback: bool,
}

fn compute_direction(p: &StackedProblem, z: &[f64], omega0: &[f64], cfg: &NewtonConfig) -> Result<Direction> {
    let inv_h = p.inverse_hessian(z)?;
    let grad = p.gradient(z);
    let jac = p.jacobian(z);
    let residual = p.residual(z);
    let hg: Vec<f64> = inv_h.iter().zip(&grad).map(|(h, g)| h * g).collect();
    let rhs: Vec<f64> = residual.iter().zip(p.apply_a(&jac, &hg)).map(|(r, a)| r - a).collect();

    let finish = |omega: Vec<f64>, inner: usize, fallback: bool| {
        let mut dz = p.newton_direction(&inv_h, &grad, &jac, &omega);
        p.project_slack_direction(&jac, &residual, &mut dz);
        let slope: f64 = grad.iter().zip(&dz).map(|(g, d)| g * d).sum();
        let decrement_sq: f64 = inv_h.iter().zip(&dz).filter(|(h, _)| **h > 0.0).map(|(h, d)| d * d / h).sum();
        Direction { dz, omega, slope, decrement_sq, inner, fallback }
    };
    let direct = || -> Result<Vec<f64>> {
        solve_direct(&dense_dual_matrix(&p.constraint_matrix(&jac), &inv_h), &rhs)
    };

    match cfg.dual_system {
        DualSystemSolver::Direct => Ok(finish(direct()?, 0, false)),
        DualSystemSolver::Splitting => {
            let op = StructuredOperator::new(p, &inv_h, &jac);
            let out = solve_splitting(&op, &rhs, omega0, cfg.inner_max_iters, cfg.inner_tol, false)?;
            let d = finish(out.omega, out.iterations, false);
            if d.slope < 0.0 && d.slope <= -0.5 * d.decrement_sq {
                Ok(d)
            } else {
                Ok(finish(direct()?, out.iterations, true))
            }
        }
    }
}

fn validate_config(cfg: &NewtonConfig) -> Result<()> {
    let checks: [(&'static str, bool); 6] = [
        ("beta0", cfg.beta0 > 0.0 && cfg.beta0.is_finite()),
        ("beta_factor", cfg.beta_factor > 0.0 && cfg.beta_factor < 1.0),
        ("gap_tol", cfg.gap_tol > 0.0),
        ("centering_tol", cfg.centering_tol > 0.0),
        ("max_total_steps", cfg.max_total_steps > 0),
        ("inner_tol", cfg.inner_tol > 0.0),
    ];
    for (name, ok) in checks {
        if !ok {
            return Err(Error::InvalidParameter { name, reason: "out of range".into() });
        }
    }
    Ok(())
}

/// Solves the barrier problem for a decreasing sequence of `β` until the
/// duality-gap bound reaches `gap_tol`.
pub fn solve(sc: &Scenario, cfg: &NewtonConfig) -> Result<NewtonSolution> {
    let violations = validate(sc);
    if !violations.is_empty() {
        return Err(Error::InvalidScenario(violations));
    }
    validate_config(cfg)?;
    let started = Instant::now();
    let mut p = StackedProblem::assemble(sc, cfg.beta0)?;
    p.curvature = cfg.curvature;
    let mut z = initial_point(&p)?;
    let (_, _, y, w) = p.split(&z);
    let mut omega: Vec<f64> = y.iter().chain(w).map(|v| p.beta / v).collect();

    let mut trace = Vec::new();
    let mut stages = Vec::new();
    let mut notes = Vec::new();
    let mut total = 0;
    let mut fallbacks = 0;
    let mut status = SolveStatus::Converged;

    'stages: loop {
        let mut steps = 0;
        loop {
            let d = compute_direction(&p, &z, &omega, cfg)?;
            fallbacks += usize::from(d.fallback);
            omega = d.omega;
            if d.decrement_sq / 2.0 <= cfg.centering_tol {
                break;
            }
            if steps >= cfg.max_steps_per_stage {
                notes.push(format!("stage with beta {:.3e} hit the step cap", p.beta));
                break;
            }
            if total >= cfg.max_total_steps {
                status = SolveStatus::MaxIterations;
                break 'stages;
            }
            let f0 = p.objective(&z);
            let Some(ls) = line_search(&p, &z, &d.dz, f0, d.slope) else {
                status = SolveStatus::Stalled;
                notes.push(format!("line search stalled at beta {:.3e}", p.beta));
                break 'stages;
            };
            let split = p.n_rates() + p.n_cells();
            let change = d.dz[..split].iter().fold(0.0f64, |m, v| m.max(ls.step * v.abs()));
            z = ls.z;
            steps += 1;
            total += 1;
            if cfg.record_trace {
                let dual = p.to_dual(&omega);
                let alloc = p.to_allocation(sc, &z);
                trace.push(TraceRow {
                    iteration: total,
                    dual_objective: dual_objective(&dual, sc),
                    max_primal_change: change,
                    max_kkt_residual: kkt_check(sc, &alloc, &dual).max_residual(),
                    inner_iterations: Some(d.inner),
                });
            }
        }
        stages.push(StageSummary {
            beta: p.beta,
            steps,
            barrier_objective: p.objective(&z),
            slack: ConstraintSlack::of(sc, &p.to_allocation(sc, &z)),
        });
        if p.barrier_terms() as f64 * p.beta <= cfg.gap_tol {
            break;
        }
        p.beta *= cfg.beta_factor;
    }

    if fallbacks > 0 {
        notes.push(format!("{fallbacks} directions used the dense dual solve"));
    }
    let allocation = p.to_allocation(sc, &z);
    let dual = p.to_dual(&omega);
    let kkt = kkt_check(sc, &allocation, &dual);
    let gap = p.barrier_terms() as f64 * p.beta;
    if status == SolveStatus::Converged && !kkt.within(&cfg.tolerance) {
        status = SolveStatus::MaxIterations;
        notes.push("barrier schedule finished outside the KKT tolerance".into());
    }
    let report = SolveReport {
        solver: "newton".into(),
        status,
        converged: status == SolveStatus::Converged,
        iterations: total,
        objective: sc.total_utility(&allocation.rates),
        kkt,
        slack: ConstraintSlack::of(sc, &allocation),
        wall_time: Some(started.elapsed().as_secs_f64()),
        notes,
        trace,
    };
    Ok(NewtonSolution { allocation, dual, report, stages, direct_fallbacks: fallbacks, gap })
}
