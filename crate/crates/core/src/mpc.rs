//! Receding-horizon control when future capacities are unknown.
//!
//! At period `τ` the remaining horizon is solved with the realized capacity
//! for `τ` and forecasts afterwards, and only period `τ` is committed.
//! Contracts whose window has started carry a residual budget: the delay
//! already incurred in committed periods is subtracted from the bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{contract_average_delay, Allocation, DelayContract, Scenario, SolveStatus};
use crate::solver::{minimum_rate_allocation, InnerSolver};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CapacityForecaster {
    /// Fixed expected capacity per link.
    ConstantMean { values: Vec<f64> },
    /// Mean of the last `window` realized capacities per link.
    RunningAverage { window: usize },
    /// True future capacities; not causal, for reference runs only.
    Exact { capacities: Grid },
}

impl CapacityForecaster {
    /// Capacity expected in period `t` given the realized rows `0..=τ`,
    /// where `τ = realized.len() − 1`. Periods up to `τ` return the realized value.
    pub fn forecast(&self, realized: &[Vec<f64>], t: usize) -> Result<Vec<f64>> {
        if let Some(row) = realized.get(t) {
            return Ok(row.clone());
        }
        let out = match self {
            CapacityForecaster::ConstantMean { values } => values.clone(),
            CapacityForecaster::RunningAverage { window } => {
                if *window == 0 || realized.is_empty() {
                    return Err(Error::InvalidParameter {
                        name: "window",
                        reason: "running average needs a positive window and one observation".into(),
                    });
                }
                let recent = &realized[realized.len().saturating_sub(*window)..];
                let links = recent[0].len();
                (0..links).map(|l| recent.iter().map(|r| r[l]).sum::<f64>() / recent.len() as f64).collect()
            }
            CapacityForecaster::Exact { capacities } => capacities.row(t).to_vec(),
        };
        if let Some(v) = out.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter { name: "forecast", reason: format!("capacity forecast {v} must be positive") });
        }
        Ok(out)
    }
}

/// Commitments and observations up to the current period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonState {
    /// First uncommitted period.
    pub tau: usize,
    /// `S × T`; columns `< τ` are committed.
    pub committed_rates: Grid,
    /// `T × L`; rows `< τ` are committed.
    pub committed_margins: Grid,
    /// Realized capacities `c_0 ..= c_τ`.
    pub realized: Vec<Vec<f64>>,
}

impl HorizonState {
    pub fn new(sc: &Scenario) -> Self {
        HorizonState {
            tau: 0,
            committed_rates: Grid::zeros(sc.sources, sc.horizon),
            committed_margins: Grid::zeros(sc.horizon, sc.links),
            realized: Vec::new(),
        }
    }
}

/// A contract rewritten over the periods that remain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualContract {
    /// Index in the original scenario.
    pub contract: usize,
    /// `d − Σ_{t<τ} weight·φ'_t`, the budget left in original weights.
    pub weighted_residual: f64,
    /// Remaining original periods.
    pub remaining: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonProblem {
    /// Periods `τ..T`, renumbered from zero.
    pub scenario: Scenario,
    /// Aligned with `scenario.contracts`.
    pub residuals: Vec<ResidualContract>,
    /// Original contracts whose window ended before `τ`.
    pub expired: Vec<usize>,
    /// Non-empty when some remaining constraint cannot be met.
    pub violations: Vec<String>,
}

pub fn build_horizon_problem(
    sc: &Scenario,
    state: &HorizonState,
    forecaster: &CapacityForecaster,
) -> Result<HorizonProblem> {
    let tau = state.tau;
    if tau >= sc.horizon || state.realized.len() != tau + 1 {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("period {tau} with {} observations over horizon {}", state.realized.len(), sc.horizon),
        });
    }
    let rem = sc.horizon - tau;
    let mut capacity = Grid::zeros(rem, sc.links);
    for t in tau..sc.horizon {
        let row = forecaster.forecast(&state.realized, t)?;
        capacity.row_mut(t - tau).copy_from_slice(&row);
    }

    let past_delays = sc.delays(&state.committed_margins);
    let mut contracts = Vec::new();
    let mut residuals = Vec::new();
    let mut expired = Vec::new();
    let mut violations = Vec::new();
    for (k, c) in sc.contracts.iter().enumerate() {
        let remaining: Vec<usize> = c.window.iter().copied().filter(|&t| t >= tau).collect();
        if remaining.is_empty() {
            expired.push(k);
            continue;
        }
        let incurred: f64 = c.window.iter().filter(|&&t| t < tau).map(|&t| c.weight() * past_delays[(c.source, t)]).sum();
        let residual = c.bound - incurred;
        if residual <= 0.0 {
            violations.push(format!(
                "contract {} already violated; remaining constraint infeasible (residual {residual:.6})",
                k + 1
            ));
            continue;
        }
        let scaled = residual * c.window.len() as f64 / remaining.len() as f64;
        contracts.push(DelayContract::new(c.source, remaining.iter().map(|t| t - tau), scaled));
        residuals.push(ResidualContract { contract: k, weighted_residual: residual, remaining });
    }

    let scenario = Scenario {
        horizon: rem,
        links: sc.links,
        sources: sc.sources,
        routing: sc.routing[tau..].to_vec(),
        capacity,
        rate_min: Grid::from_fn(sc.sources, rem, |s, t| sc.rate_min[(s, t + tau)]),
        rate_max: Grid::from_fn(sc.sources, rem, |s, t| sc.rate_max[(s, t + tau)]),
        utilities: sc.utilities.iter().map(|u| u[tau..].to_vec()).collect(),
        delay_model: sc.delay_model.clone(),
        contracts,
    };
    Ok(HorizonProblem { scenario, residuals, expired, violations })
}

/// Log record of one committed period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcStep {
    /// 1-based period.
    pub period: usize,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Minimum rates were committed instead of a solver result.
    pub fallback: bool,
    pub flags: Vec<String>,
    pub expired: Vec<usize>,
    pub residuals: Vec<ResidualContract>,
    pub committed_rates: Vec<f64>,
    pub committed_margins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcOutcome {
    pub allocation: Allocation,
    pub steps: Vec<MpcStep>,
    pub utility: f64,
    /// Realized window average per original contract.
    pub contract_averages: Vec<f64>,
}

impl MpcOutcome {
    pub fn any_fallback(&self) -> bool {
        self.steps.iter().any(|s| s.fallback)
    }
}

/// Runs the receding-horizon loop over the realized capacity stream
/// (`T × L`, row `τ` revealed at period `τ`).
pub fn rolling_solve(
    sc: &Scenario,
    stream: &Grid,
    forecaster: &CapacityForecaster,
    inner: &InnerSolver,
) -> Result<MpcOutcome> {
    if stream.shape() != (sc.horizon, sc.links) {
        return Err(Error::ShapeMismatch(format!(
            "capacity stream is {:?}, expected {:?}",
            stream.shape(),
            (sc.horizon, sc.links)
        )));
    }
    let mut state = HorizonState::new(sc);
    let mut steps = Vec::with_capacity(sc.horizon);
    for tau in 0..sc.horizon {
        state.tau = tau;
        state.realized.push(stream.row(tau).to_vec());
        let hp = build_horizon_problem(sc, &state, forecaster)?;
        let mut flags = hp.violations.clone();
        let mut fallback = !flags.is_empty();
        let mut status = SolveStatus::Infeasible;
        let mut iterations = 0;
        let mut commit = None;
        if !fallback {
            let sol = inner.run(&hp.scenario)?;
            status = sol.report.status;
            iterations = sol.report.iterations;
            match status {
                SolveStatus::Infeasible | SolveStatus::LikelyInfeasible => {
                    fallback = true;
                    flags.extend(sol.report.notes.iter().cloned());
                }
                SolveStatus::Converged => commit = Some(sol.allocation),
                _ => {
                    flags.push(format!("inner solve ended with status {status:?}"));
                    commit = Some(sol.allocation);
                }
            }
        }
        let alloc = commit.unwrap_or_else(|| minimum_rate_allocation(&hp.scenario));
        let rates: Vec<f64> = (0..sc.sources).map(|s| alloc.rates[(s, 0)]).collect();
        let margins = alloc.margins.row(0).to_vec();
        for (s, &x) in rates.iter().enumerate() {
            state.committed_rates[(s, tau)] = x;
        }
        state.committed_margins.row_mut(tau).copy_from_slice(&margins);
        steps.push(MpcStep {
            period: tau + 1,
            status,
            iterations,
            fallback,
            flags,
            expired: hp.expired,
            residuals: hp.residuals,
            committed_rates: rates,
            committed_margins: margins,
        });
    }
    let realized_sc = Scenario { capacity: stream.clone(), ..sc.clone() };
    let allocation = realized_sc.allocation(state.committed_rates, state.committed_margins);
    let contract_averages = sc.contracts.iter().map(|c| contract_average_delay(&allocation.delays, c)).collect();
    Ok(MpcOutcome { utility: sc.total_utility(&allocation.rates), allocation, steps, contract_averages })
}
