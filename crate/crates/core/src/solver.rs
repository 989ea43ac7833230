//! Uniform front end over the two solvers.

use serde::{Deserialize, Serialize};

use crate::dual_solver::{self, DualSolverConfig};
use crate::error::{Error, Result};
use crate::model::{Allocation, DualState, Scenario, SolveReport, SolveStatus};
use crate::newton::{self, NewtonConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "snake_case")]
pub enum InnerSolver {
    Dual(DualSolverConfig),
    Newton(NewtonConfig),
}

impl Default for InnerSolver {
    fn default() -> Self {
        InnerSolver::Newton(NewtonConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub allocation: Allocation,
    pub dual: DualState,
    pub report: SolveReport,
}

impl InnerSolver {
    /// Runs the configured solver. A Newton start-up failure is reported as
    /// an infeasible solve at the minimum rates rather than an error.
    pub fn run(&self, sc: &Scenario) -> Result<Solution> {
        match self {
            InnerSolver::Dual(cfg) => {
                let s = dual_solver::solve(sc, cfg)?;
                Ok(Solution { allocation: s.allocation, dual: s.dual, report: s.report })
            }
            InnerSolver::Newton(cfg) => match newton::solve(sc, cfg) {
                Ok(s) => Ok(Solution { allocation: s.allocation, dual: s.dual, report: s.report }),
                Err(Error::CannotInitialize(reason)) => Ok(infeasible(sc, "newton", reason)),
                Err(e) => Err(e),
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InnerSolver::Dual(_) => "dual",
            InnerSolver::Newton(_) => "newton",
        }
    }
}

/// Minimum rates with all leftover capacity as margin, flagged infeasible.
pub fn infeasible(sc: &Scenario, solver: &str, reason: String) -> Solution {
    let allocation = minimum_rate_allocation(sc);
    let dual = DualState::uniform(sc, 0.0);
    let kkt = crate::oracle::kkt_check(sc, &allocation, &dual);
    let report = SolveReport {
        solver: solver.into(),
        status: SolveStatus::Infeasible,
        converged: false,
        iterations: 0,
        objective: sc.total_utility(&allocation.rates),
        kkt,
        slack: crate::model::ConstraintSlack::of(sc, &allocation),
        wall_time: None,
        notes: vec![reason],
        trace: vec![],
    };
    Solution { allocation, dual, report }
}

/// `x = w`, `σ = max(c − R w, 0)`.
pub fn minimum_rate_allocation(sc: &Scenario) -> Allocation {
    let rates = sc.rate_min.clone();
    let margins = crate::grid::Grid::from_fn(sc.horizon, sc.links, |t, l| {
        (sc.capacity[(t, l)] - sc.link_load(&rates, t, l)).max(0.0)
    });
    sc.allocation(rates, margins)
}
