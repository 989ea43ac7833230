//! Period-by-period baseline.
//!
//! Every period is solved on its own. A contract covering the period is
//! imposed on that period alone, so an average bound becomes a per-period
//! bound on the route delay.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::Grid;
use crate::model::{Allocation, DelayContract, Scenario, SolveReport, SolveStatus};
use crate::solver::InnerSolver;

/// One-period scenario for period `t`.
pub fn single_period_problem(sc: &Scenario, t: usize) -> Scenario {
    Scenario {
        horizon: 1,
        links: sc.links,
        sources: sc.sources,
        routing: vec![sc.routing[t].clone()],
        capacity: Grid::from_fn(1, sc.links, |_, l| sc.capacity[(t, l)]),
        rate_min: Grid::from_fn(sc.sources, 1, |s, _| sc.rate_min[(s, t)]),
        rate_max: Grid::from_fn(sc.sources, 1, |s, _| sc.rate_max[(s, t)]),
        utilities: sc.utilities.iter().map(|u| vec![u[t]]).collect(),
        delay_model: sc.delay_model.clone(),
        contracts: sc
            .contracts
            .iter()
            .filter(|c| c.covers(t))
            .map(|c| DelayContract::new(c.source, [0], c.bound))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub allocation: Allocation,
    pub reports: Vec<SolveReport>,
    /// 0-based periods whose problem has no feasible point.
    pub infeasible_periods: Vec<usize>,
}

impl BaselineOutcome {
    pub fn all_feasible(&self) -> bool {
        self.infeasible_periods.is_empty()
    }
}

pub fn solve_single_period(sc: &Scenario, solver: &InnerSolver) -> Result<BaselineOutcome> {
    let mut rates = Grid::zeros(sc.sources, sc.horizon);
    let mut margins = Grid::zeros(sc.horizon, sc.links);
    let mut reports = Vec::with_capacity(sc.horizon);
    let mut infeasible_periods = Vec::new();
    for t in 0..sc.horizon {
        let sol = solver.run(&single_period_problem(sc, t))?;
        if matches!(sol.report.status, SolveStatus::Infeasible | SolveStatus::LikelyInfeasible) {
            infeasible_periods.push(t);
        }
        for s in 0..sc.sources {
            rates[(s, t)] = sol.allocation.rates[(s, 0)];
        }
        for l in 0..sc.links {
            margins[(t, l)] = sol.allocation.margins[(0, l)];
        }
        reports.push(sol.report);
    }
    Ok(BaselineOutcome { allocation: sc.allocation(rates, margins), reports, infeasible_periods })
}

/// Mean over periods and links of `c − R x`, margins included.
pub fn average_unused_capacity(sc: &Scenario, rates: &Grid) -> f64 {
    let mut total = 0.0;
    for t in 0..sc.horizon {
        for l in 0..sc.links {
            total += sc.capacity[(t, l)] - sc.link_load(rates, t, l);
        }
    }
    total / (sc.horizon * sc.links) as f64
}
