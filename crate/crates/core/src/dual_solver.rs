//! Dual gradient projection (DA-DNUM).
//!
//! Each iteration recovers the primal maximizers of the partial Lagrangian in
//! closed form (rates from the route prices, margins from the ratio of
//! capacity to delay prices) and takes a projected gradient step on the dual.
//! All per-link and per-source updates within an iteration are independent;
//! they are executed in lockstep here.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functions::{DelayFunction, UtilityFunction, WorkingDomain};
use crate::grid::Grid;
use crate::model::{
    max_margin_probe, validate, Allocation, ConstraintSlack, DualState, KktTolerance, Scenario, SolveReport,
    SolveStatus, TraceRow,
};
use crate::oracle::kkt_check;

/// Lower end of the default working domain for delay constants.
pub const DEFAULT_DOMAIN_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Fixed(f64),
    /// `1/Q` from [`step_size_bound`].
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolverConfig {
    pub gamma: StepSize,
    /// Stop once the largest primal change of an iteration is at most `th`
    /// and the KKT residuals are within `tolerance`.
    pub th: f64,
    pub max_iters: usize,
    pub mu_min: f64,
    /// `None` uses ten times the largest utility slope at the minimum rates.
    pub lambda_max: Option<f64>,
    pub record_trace: bool,
    /// Re-evaluate the step bound from running dual extremes every 50 iterations.
    pub adaptive: bool,
    pub tolerance: KktTolerance,
    /// Starting value of every capacity and delay price.
    pub initial_price: f64,
    /// Prices above this with non-shrinking violation flag likely infeasibility.
    pub dual_ceiling: f64,
    /// Keep iterates in `[0, λ_max] × [μ_min, ∞)`, the region the step bound covers.
    pub box_projection: bool,
}

impl Default for DualSolverConfig {
    fn default() -> Self {
        DualSolverConfig {
            gamma: StepSize::Fixed(0.01),
            th: 0.01,
            max_iters: 2_000_000,
            mu_min: 1e-2,
            lambda_max: None,
            record_trace: false,
            adaptive: false,
            tolerance: KktTolerance::default(),
            initial_price: 0.1,
            dual_ceiling: 1e8,
            box_projection: false,
        }
    }
}

/// Route prices `λ^st` and link delay prices `μ^tl`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPrices {
    /// `S × T`.
    pub lambda_route: Grid,
    /// `T × L`.
    pub mu_link: Grid,
}

pub fn aggregate_prices(dual: &DualState, sc: &Scenario) -> AggregatedPrices {
    let lambda_route = Grid::from_fn(sc.sources, sc.horizon, |s, t| {
        sc.routing[t].route(s).iter().map(|&l| dual.lambda[(t, l)]).sum()
    });
    let mut mu_link = Grid::zeros(sc.horizon, sc.links);
    for (k, c) in sc.contracts.iter().enumerate() {
        let share = c.weight() * dual.mu[k];
        for &t in &c.window {
            for &l in sc.routing[t].route(c.source) {
                mu_link[(t, l)] += share;
            }
        }
    }
    AggregatedPrices { lambda_route, mu_link }
}

/// `x_st = clip(U'⁻¹(λ^st), [w_st, W_st])`; a zero route price gives `W_st`.
pub fn primal_rates(prices: &AggregatedPrices, sc: &Scenario) -> Grid {
    Grid::from_fn(sc.sources, sc.horizon, |s, t| {
        let (lo, hi) = (sc.rate_min[(s, t)], sc.rate_max[(s, t)]);
        match sc.utility(s, t).inv_deriv(prices.lambda_route[(s, t)]) {
            Ok(x) => x.clamp(lo, hi),
            Err(_) => hi,
        }
    })
}

/// Minimizer of `μ^tl D(σ) + λ_tl σ` over `0 ≤ σ ≤ c_tl`.
///
/// No delay pressure gives `σ = 0`; no capacity price gives `σ = c_tl`.
pub fn primal_margins(dual: &DualState, prices: &AggregatedPrices, sc: &Scenario) -> Grid {
    Grid::from_fn(sc.horizon, sc.links, |t, l| {
        let mu = prices.mu_link[(t, l)];
        let lambda = dual.lambda[(t, l)];
        let cap = sc.capacity[(t, l)];
        if mu <= 0.0 {
            0.0
        } else if lambda <= 0.0 {
            cap
        } else {
            sc.delay_model[l].inv_deriv(-lambda / mu).map_or(cap, |s| s.min(cap))
        }
    })
}

/// Gradient of the dual function.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGradient {
    /// `c_tl − σ_tl − Σ_s (R_t)_ls x_st`.
    pub lambda: Grid,
    /// `d_k − Σ_t Σ_l (M_s)_kt (R_t)_ls D(σ_tl)`.
    pub mu: Vec<f64>,
    /// `(contract, period, link)` entries where `D` hit a zero margin and
    /// was evaluated at [`DEFAULT_DOMAIN_FLOOR`] instead. A smaller floor
    /// lets one step throw `μ` to the order of `γ/floor`.
    pub floored: Vec<(usize, usize, usize)>,
}

pub fn dual_gradient(rates: &Grid, margins: &Grid, sc: &Scenario) -> DualGradient {
    let lambda = Grid::from_fn(sc.horizon, sc.links, |t, l| {
        sc.capacity[(t, l)] - margins[(t, l)] - sc.link_load(rates, t, l)
    });
    let mut floored = Vec::new();
    let mu = sc
        .contracts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let w = c.weight();
            let mut avg = 0.0;
            for &t in &c.window {
                for &l in sc.routing[t].route(c.source) {
                    let mut sigma = margins[(t, l)];
                    if sigma <= 0.0 {
                        floored.push((k, t, l));
                        sigma = DEFAULT_DOMAIN_FLOOR;
                    }
                    avg += w * sc.delay_model[l].value(sigma);
                }
            }
            c.bound - avg
        })
        .collect();
    DualGradient { lambda, mu, floored }
}

/// Projected step: prices move against the dual gradient, i.e. up with
/// constraint violation, and are clipped at zero.
pub fn dual_update(dual: &DualState, grad: &DualGradient, gamma: f64) -> DualState {
    let mut lambda = dual.lambda.clone();
    for (v, g) in lambda.as_mut_slice().iter_mut().zip(grad.lambda.as_slice()) {
        *v = (*v - gamma * g).max(0.0);
    }
    let mu = dual.mu.iter().zip(&grad.mu).map(|(m, g)| (m - gamma * g).max(0.0)).collect();
    DualState { lambda, mu }
}

/// Clips `λ` to `[0, lambda_max]` and raises `μ` to at least `mu_min`.
pub fn project_box(dual: &mut DualState, lambda_max: f64, mu_min: f64) {
    for v in dual.lambda.as_mut_slice() {
        *v = v.clamp(0.0, lambda_max);
    }
    for m in &mut dual.mu {
        *m = m.max(mu_min);
    }
}

/// Value of the dual function at `dual`, with maximizers recovered in closed form.
pub fn dual_objective(dual: &DualState, sc: &Scenario) -> f64 {
    let prices = aggregate_prices(dual, sc);
    let rates = primal_rates(&prices, sc);
    let margins = primal_margins(dual, &prices, sc);
    let mut g = 0.0;
    for s in 0..sc.sources {
        for t in 0..sc.horizon {
            let x = rates[(s, t)];
            g += sc.utility(s, t).value(x) - prices.lambda_route[(s, t)] * x;
        }
    }
    for t in 0..sc.horizon {
        for l in 0..sc.links {
            let (mu, lambda, sigma) = (prices.mu_link[(t, l)], dual.lambda[(t, l)], margins[(t, l)]);
            if mu > 0.0 {
                g -= mu * sc.delay_model[l].value(sigma);
            }
            g -= lambda * sigma;
            g += lambda * sc.capacity[(t, l)];
        }
    }
    for (k, c) in sc.contracts.iter().enumerate() {
        g += dual.mu[k] * c.bound;
    }
    g
}

/// Problem-size and curvature inputs of the step bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepBoundInputs {
    pub periods: usize,
    pub links: usize,
    pub sources: usize,
    pub total_contracts: usize,
    pub lipschitz: f64,
    pub delay_convexity: f64,
    pub utility_concavity: f64,
    pub lambda_max: f64,
    pub mu_min: f64,
}

/// Lipschitz bound `Q` on the dual gradient; steps below `2/Q` converge.
pub fn q_bound(p: &StepBoundInputs) -> Result<f64> {
    if !(p.mu_min > 0.0) {
        return Err(Error::NonPositiveDualFloor(p.mu_min));
    }
    let tl = (p.periods * p.links) as f64;
    let k = p.total_contracts as f64;
    let (g, kd, ku) = (p.lipschitz, p.delay_convexity, p.utility_concavity);
    let (lmax, mmin) = (p.lambda_max, p.mu_min);
    let first = tl * (1.0 / (mmin * kd) + p.sources as f64 / ku);
    let second = g * tl * lmax / (mmin * mmin * kd) * k;
    let third = (tl * k).sqrt() * (g / (mmin * kd) + 1.0 / (mmin * mmin * ku));
    Ok(first + second + third)
}

/// Worst-case constants of the scenario on the default working domain
/// `[1e-3, max capacity]` and the rate boxes.
pub fn step_bound_inputs(sc: &Scenario, lambda_max: f64, mu_min: f64) -> Result<StepBoundInputs> {
    let domain = WorkingDomain::new(DEFAULT_DOMAIN_FLOOR, sc.capacity.max())?;
    step_bound_inputs_on(sc, lambda_max, mu_min, domain)
}

pub fn step_bound_inputs_on(
    sc: &Scenario,
    lambda_max: f64,
    mu_min: f64,
    domain: WorkingDomain,
) -> Result<StepBoundInputs> {
    let mut lipschitz: f64 = 0.0;
    let mut delay_convexity = f64::INFINITY;
    for d in &sc.delay_model {
        let c = d.constants(domain)?;
        lipschitz = lipschitz.max(c.lipschitz);
        delay_convexity = delay_convexity.min(c.convexity);
    }
    let mut utility_concavity = f64::INFINITY;
    for s in 0..sc.sources {
        for t in 0..sc.horizon {
            let m = sc.utility(s, t).concavity_modulus(sc.rate_min[(s, t)], sc.rate_max[(s, t)]);
            utility_concavity = utility_concavity.min(m);
        }
    }
    Ok(StepBoundInputs {
        periods: sc.horizon,
        links: sc.links,
        sources: sc.sources,
        total_contracts: sc.contracts.len(),
        lipschitz,
        delay_convexity,
        utility_concavity,
        lambda_max,
        mu_min,
    })
}

pub fn step_size_bound(sc: &Scenario, lambda_max: f64, mu_min: f64) -> Result<f64> {
    q_bound(&step_bound_inputs(sc, lambda_max, mu_min)?)
}

/// Ten times the steepest utility slope at the minimum rates.
pub fn default_lambda_max(sc: &Scenario) -> f64 {
    let mut m: f64 = 0.0;
    for s in 0..sc.sources {
        for t in 0..sc.horizon {
            m = m.max(sc.utility(s, t).deriv(sc.rate_min[(s, t)]));
        }
    }
    10.0 * m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub allocation: Allocation,
    pub dual: DualState,
    pub report: SolveReport,
    /// First iteration at which the primal-change rule alone was met.
    pub th_iterations: Option<usize>,
    /// Step size used in the final iteration.
    pub gamma: f64,
}

fn validate_config(cfg: &DualSolverConfig) -> Result<()> {
    if let StepSize::Fixed(g) = cfg.gamma {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::InvalidParameter { name: "gamma", reason: format!("must be positive, got {g}") });
        }
    }
    if !(cfg.th > 0.0) {
        return Err(Error::InvalidParameter { name: "th", reason: format!("must be positive, got {}", cfg.th) });
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidParameter { name: "max_iters", reason: "must be at least 1".into() });
    }
    if !(cfg.initial_price >= 0.0) {
        return Err(Error::InvalidParameter { name: "initial_price", reason: "must be nonnegative".into() });
    }
    Ok(())
}

fn max_violation(grad: &DualGradient) -> f64 {
    let cap = grad.lambda.as_slice().iter().fold(0.0f64, |m, g| m.max(-g));
    grad.mu.iter().fold(cap, |m, g| m.max(-g))
}

/// Runs dual gradient projection until the primal-change rule and the KKT
/// tolerances are both met, or an iteration/infeasibility limit is hit.
pub fn solve(sc: &Scenario, cfg: &DualSolverConfig) -> Result<DualSolution> {
    let violations = validate(sc);
    if !violations.is_empty() {
        return Err(Error::InvalidScenario(violations));
    }
    validate_config(cfg)?;
    let started = Instant::now();
    let mut notes = Vec::new();

    let lambda_max = cfg.lambda_max.unwrap_or_else(|| default_lambda_max(sc));
    let q = step_size_bound(sc, lambda_max, cfg.mu_min)?;
    let mut gamma = match cfg.gamma {
        StepSize::Fixed(g) => {
            if g >= 2.0 / q {
                notes.push(format!("step {g} is not below the guaranteed bound 2/Q = {:.3e}", 2.0 / q));
            }
            g
        }
        StepSize::Auto => 1.0 / q,
    };

    if let Err(reason) = max_margin_probe(sc) {
        let rates = sc.rate_min.clone();
        let margins = Grid::from_fn(sc.horizon, sc.links, |t, l| {
            (sc.capacity[(t, l)] - sc.link_load(&rates, t, l)).max(0.0)
        });
        let dual = DualState::uniform(sc, 0.0);
        notes.push(reason);
        return Ok(finish(sc, rates, margins, dual, SolveStatus::Infeasible, 0, None, gamma, notes, Vec::new()));
    }

    let mut dual = DualState::uniform(sc, cfg.initial_price);
    let mut prev_rates = sc.rate_min.clone();
    let mut prev_margins = Grid::zeros(sc.horizon, sc.links);
    let mut trace = Vec::new();
    let mut th_iterations = None;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut last_checked_violation = f64::INFINITY;

    let (rates, margins) = loop {
        iterations += 1;
        let prices = aggregate_prices(&dual, sc);
        let rates = primal_rates(&prices, sc);
        let margins = primal_margins(&dual, &prices, sc);
        let change = rates.max_abs_diff(&prev_rates).max(margins.max_abs_diff(&prev_margins));
        let grad = dual_gradient(&rates, &margins, sc);

        let th_met = change <= cfg.th;
        if th_met && th_iterations.is_none() {
            th_iterations = Some(iterations);
        }
        let need_kkt = th_met || cfg.record_trace;
        let kkt = need_kkt.then(|| kkt_check(sc, &sc.allocation(rates.clone(), margins.clone()), &dual));
        if cfg.record_trace {
            trace.push(TraceRow {
                iteration: iterations,
                dual_objective: dual_objective(&dual, sc),
                max_primal_change: change,
                max_kkt_residual: kkt.map_or(f64::NAN, |k| k.max_residual()),
                inner_iterations: None,
            });
        }
        if th_met && kkt.is_some_and(|k| k.within(&cfg.tolerance)) {
            status = SolveStatus::Converged;
            break (rates, margins);
        }
        if iterations >= cfg.max_iters {
            break (rates, margins);
        }

        if iterations % 1000 == 0 {
            let peak = dual.lambda.max().max(dual.mu.iter().copied().fold(0.0, f64::max));
            let violation = max_violation(&grad);
            if peak > cfg.dual_ceiling && violation >= last_checked_violation {
                status = SolveStatus::LikelyInfeasible;
                notes.push(format!("dual prices reached {peak:.3e} with violation {violation:.3e} not shrinking"));
                break (rates, margins);
            }
            last_checked_violation = violation;
        }

        if cfg.adaptive && iterations % 50 == 0 {
            let run_lambda_max = dual.lambda.max().max(lambda_max);
            let run_mu_min = dual.mu.iter().copied().fold(f64::INFINITY, f64::min);
            if run_mu_min.is_finite() && run_mu_min > 0.0 {
                let q = step_size_bound(sc, run_lambda_max, run_mu_min)?;
                if gamma >= 2.0 / q {
                    gamma = 1.0 / q;
                    notes.push(format!("iteration {iterations}: step reduced to {gamma:.3e}"));
                }
            }
        }

        dual = dual_update(&dual, &grad, gamma);
        if cfg.box_projection {
            project_box(&mut dual, lambda_max, cfg.mu_min);
        }
        prev_rates = rates;
        prev_margins = margins;
    };

    let mut solution = finish(sc, rates, margins, dual, status, iterations, th_iterations, gamma, notes, trace);
    solution.report.wall_time = Some(started.elapsed().as_secs_f64());
    Ok(solution)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    sc: &Scenario,
    rates: Grid,
    margins: Grid,
    dual: DualState,
    status: SolveStatus,
    iterations: usize,
    th_iterations: Option<usize>,
    gamma: f64,
    notes: Vec<String>,
    trace: Vec<TraceRow>,
) -> DualSolution {
    let allocation = sc.allocation(rates, margins);
    let kkt = kkt_check(sc, &allocation, &dual);
    let report = SolveReport {
        solver: "dual".into(),
        status,
        converged: status == SolveStatus::Converged,
        iterations,
        objective: sc.total_utility(&allocation.rates),
        kkt,
        slack: ConstraintSlack::of(sc, &allocation),
        wall_time: None,
        notes,
        trace,
    };
    DualSolution { allocation, dual, report, th_iterations, gamma }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::functions::{DelaySpec, UtilitySpec};
    use crate::model::{DelayContract, Routing};

    fn single_link(sources: usize, capacity: f64) -> Scenario {
        let routing = Routing::from_routes(1, &vec![vec![0]; sources]);
        Scenario {
            horizon: 1,
            links: 1,
            sources,
            routing: vec![routing],
            capacity: Grid::filled(1, 1, capacity),
            rate_min: Grid::filled(sources, 1, 0.1),
            rate_max: Grid::filled(sources, 1, 10.0),
            utilities: vec![vec![UtilitySpec::Log]; sources],
            delay_model: vec![DelaySpec::Mm1 { q: 1.0 }],
            contracts: vec![],
        }
    }

    #[test]
    fn route_price_single_term() {
        let sc = single_link(1, 5.0);
        let mut dual = DualState::uniform(&sc, 0.0);
        dual.lambda[(0, 0)] = 3.0;
        assert_eq!(aggregate_prices(&dual, &sc).lambda_route[(0, 0)], 3.0);
    }

    #[test]
    fn link_delay_price_weighted_by_window() {
        let mut sc = single_link(2, 5.0);
        sc.horizon = 2;
        sc.routing = vec![sc.routing[0].clone(); 2];
        sc.capacity = Grid::filled(2, 1, 5.0);
        sc.rate_min = Grid::filled(2, 2, 0.1);
        sc.rate_max = Grid::filled(2, 2, 10.0);
        sc.utilities = vec![vec![UtilitySpec::Log; 2]; 2];
        sc.contracts = vec![DelayContract::new(0, [0, 1], 3.0)];
        let mut dual = DualState::uniform(&sc, 0.0);
        dual.mu[0] = 4.0;
        let p = aggregate_prices(&dual, &sc);
        assert_relative_eq!(p.mu_link[(0, 0)], 2.0);
        assert_relative_eq!(p.mu_link[(1, 0)], 2.0);
    }

    #[test]
    fn rates_follow_inverse_slope_and_clip() {
        let sc = single_link(3, 5.0);
        let prices = AggregatedPrices {
            lambda_route: Grid::from_rows(&[vec![0.5], vec![0.05], vec![0.0]]).unwrap(),
            mu_link: Grid::zeros(1, 1),
        };
        let x = primal_rates(&prices, &sc);
        assert_relative_eq!(x[(0, 0)], 2.0);
        assert_relative_eq!(x[(1, 0)], 10.0);
        assert_relative_eq!(x[(2, 0)], 10.0);
    }

    #[test]
    fn margins_from_price_ratio() {
        let sc = single_link(1, 5.0);
        let mut dual = DualState::uniform(&sc, 0.0);
        dual.lambda[(0, 0)] = 1.0;
        let mut prices = aggregate_prices(&dual, &sc);
        prices.mu_link[(0, 0)] = 4.0;
        assert_relative_eq!(primal_margins(&dual, &prices, &sc)[(0, 0)], 2.0);

        prices.mu_link[(0, 0)] = 0.0;
        dual.lambda[(0, 0)] = 7.0;
        assert_eq!(primal_margins(&dual, &prices, &sc)[(0, 0)], 0.0);

        prices.mu_link[(0, 0)] = 1.0;
        dual.lambda[(0, 0)] = 0.0;
        assert_eq!(primal_margins(&dual, &prices, &sc)[(0, 0)], 5.0);
    }

    #[test]
    fn gradient_examples() {
        let mut sc = single_link(1, 10.0);
        sc.contracts = vec![DelayContract::new(0, [0], 2.0)];
        let x = Grid::filled(1, 1, 4.0);
        let sigma = Grid::filled(1, 1, 1.0);
        let g = dual_gradient(&x, &sigma, &sc);
        assert_relative_eq!(g.lambda[(0, 0)], 5.0);
        assert_relative_eq!(g.mu[0], 1.0);
        assert!(g.floored.is_empty());

        let g0 = dual_gradient(&x, &Grid::zeros(1, 1), &sc);
        assert_eq!(g0.floored, vec![(0, 0, 0)]);
        assert_relative_eq!(g0.mu[0], 2.0 - 1.0 / DEFAULT_DOMAIN_FLOOR);
    }

    #[test]
    fn box_projection_clips_both_sides() {
        let mut dual = DualState { lambda: Grid::from_rows(&[vec![12.0]]).unwrap(), mu: vec![0.0, 3.0] };
        project_box(&mut dual, 10.0, 0.5);
        assert_eq!(dual.lambda[(0, 0)], 10.0);
        assert_eq!(dual.mu, vec![0.5, 3.0]);
    }

    #[test]
    fn update_projects_and_steps() {
        let sc = single_link(1, 10.0);
        let mut dual = DualState::uniform(&sc, 0.0);
        let mut grad = DualGradient { lambda: Grid::filled(1, 1, 3.0), mu: vec![], floored: vec![] };
        assert_eq!(dual_update(&dual, &grad, 0.1).lambda[(0, 0)], 0.0);
        dual.lambda[(0, 0)] = 1.0;
        grad.lambda[(0, 0)] = -2.0;
        assert_relative_eq!(dual_update(&dual, &grad, 0.1).lambda[(0, 0)], 1.2);
    }

    #[test]
    fn q_bound_unit_case() {
        let p = StepBoundInputs {
            periods: 1,
            links: 1,
            sources: 1,
            total_contracts: 1,
            lipschitz: 1.0,
            delay_convexity: 1.0,
            utility_concavity: 1.0,
            lambda_max: 1.0,
            mu_min: 1.0,
        };
        let q = q_bound(&p).unwrap();
        assert_relative_eq!(q, 5.0);
        assert_relative_eq!(1.0 / q, 0.2);

        let doubled = q_bound(&StepBoundInputs { lambda_max: 2.0, ..p }).unwrap();
        assert_relative_eq!(doubled - q, 1.0);

        let err = q_bound(&StepBoundInputs { mu_min: 0.0, ..p }).unwrap_err();
        assert!(err.to_string().contains("positive dual floor"));
    }

    #[test]
    fn symmetric_sources_split_capacity() {
        let sc = single_link(2, 2.0);
        let sol = solve(&sc, &DualSolverConfig::default()).unwrap();
        assert!(sol.report.converged, "{:?}", sol.report);
        assert!((sol.allocation.rates[(0, 0)] - 1.0).abs() < 1e-3);
        assert!((sol.allocation.rates[(1, 0)] - 1.0).abs() < 1e-3);
        assert!(sol.allocation.margins.max() == 0.0);
    }

    #[test]
    fn infeasible_contract_reported() {
        let mut sc = single_link(2, 2.0);
        sc.contracts = vec![DelayContract::new(0, [0], 0.1)];
        let sol = solve(&sc, &DualSolverConfig::default()).unwrap();
        assert_eq!(sol.report.status, SolveStatus::Infeasible);
        assert!(!sol.report.converged);
    }

    #[test]
    fn rejects_bad_step() {
        let sc = single_link(2, 2.0);
        let cfg = DualSolverConfig { gamma: StepSize::Fixed(0.0), ..Default::default() };
        assert!(matches!(solve(&sc, &cfg), Err(Error::InvalidParameter { name: "gamma", .. })));
    }
}
