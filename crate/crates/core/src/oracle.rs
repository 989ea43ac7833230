//! Independent correctness checks: a KKT residual evaluator and an
//! exhaustive grid search for tiny instances.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual_solver::aggregate_prices;
use crate::error::{Error, Result};
use crate::functions::{DelayFunction, UtilityFunction};
use crate::grid::Grid;
use crate::model::{
    contract_average_delay, Allocation, ConstraintSlack, DualState, KktReport, Scenario, MARGIN_FLOOR,
};

/// Largest `TS + TL` the grid oracle accepts.
pub const ORACLE_DIMENSION_CAP: usize = 6;

/// Evaluates the KKT residuals of the Lagrangian
/// `Σ U(x) − Σ λ(Rx + σ − c) − Σ μ(Mφ(σ) − d)` at `(allocation, dual)`.
///
/// Stationarity is measured by the natural residual `|z − P(z + ∇_z L)|`,
/// which is zero exactly when the gradient vanishes in the interior and
/// points out of the box at active bounds.
pub fn kkt_check(sc: &Scenario, alloc: &Allocation, dual: &DualState) -> KktReport {
    let prices = aggregate_prices(dual, sc);
    let mut stationarity: f64 = 0.0;
    let mut box_violation: f64 = 0.0;
    for s in 0..sc.sources {
        for t in 0..sc.horizon {
            let x = alloc.rates[(s, t)];
            let (lo, hi) = (sc.rate_min[(s, t)], sc.rate_max[(s, t)]);
            box_violation = box_violation.max(lo - x).max(x - hi);
            let g = sc.utility(s, t).deriv(x.max(f64::MIN_POSITIVE)) - prices.lambda_route[(s, t)];
            stationarity = stationarity.max((x - (x + g).clamp(lo, hi)).abs());
        }
    }
    for t in 0..sc.horizon {
        for l in 0..sc.links {
            let sigma = alloc.margins[(t, l)];
            box_violation = box_violation.max(-sigma);
            let mu = prices.mu_link[(t, l)];
            let slope = if mu > 0.0 { mu * sc.delay_model[l].deriv(sigma.max(MARGIN_FLOOR)) } else { 0.0 };
            let g = -(slope + dual.lambda[(t, l)]);
            stationarity = stationarity.max((sigma - (sigma + g).max(0.0)).abs());
        }
    }

    let slack = ConstraintSlack::of(sc, alloc);
    let capacity_violation = slack.capacity.as_slice().iter().fold(box_violation, |m, s| m.max(-s)).max(0.0);
    let contract_violation = slack.contracts.iter().fold(0.0f64, |m, s| m.max(-s));

    let mut complementarity: f64 = 0.0;
    for (lambda, s) in dual.lambda.as_slice().iter().zip(slack.capacity.as_slice()) {
        complementarity = complementarity.max((lambda * s).abs());
    }
    for (mu, s) in dual.mu.iter().zip(&slack.contracts) {
        complementarity = complementarity.max((mu * s).abs());
    }

    KktReport {
        stationarity,
        primal_feasibility: capacity_violation.max(contract_violation),
        capacity_violation,
        contract_violation,
        dual_feasibility: dual.min_entry(),
        complementarity,
    }
}

/// Result of [`grid_oracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub utility: f64,
    pub allocation: Allocation,
    /// Points evaluated over all refinement levels.
    pub evaluated: usize,
}

/// Most points a single refinement level may enumerate.
const LEVEL_BUDGET: f64 = 2.0e6;

struct FreeRate {
    s: usize,
    t: usize,
    lo: f64,
    hi: f64,
}

/// Brute-force maximizer for instances with `TS + TL ≤ 6`.
///
/// Rates are enumerated on a grid refined level by level around the
/// incumbent until the spacing reaches `resolution`. For fixed rates the
/// margins are set to the leftover capacity on links crossed by a contract
/// route and to zero elsewhere; larger margins only lower delays and
/// margins carry no utility, so this choice loses nothing.
pub fn grid_oracle(sc: &Scenario, resolution: f64) -> Result<OracleResult> {
    let dims = sc.horizon * sc.sources + sc.horizon * sc.links;
    if dims > ORACLE_DIMENSION_CAP {
        return Err(Error::InstanceTooLarge { dims, cap: ORACLE_DIMENSION_CAP });
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidParameter { name: "resolution", reason: "must be positive".into() });
    }
    let violations = crate::model::validate(sc);
    if !violations.is_empty() {
        return Err(Error::InvalidScenario(violations));
    }

    let mut touched = Grid::zeros(sc.horizon, sc.links);
    for c in &sc.contracts {
        for &t in &c.window {
            for &l in sc.routing[t].route(c.source) {
                touched[(t, l)] = 1.0;
            }
        }
    }

    let mut base = sc.rate_min.clone();
    let mut free = Vec::new();
    for s in 0..sc.sources {
        for t in 0..sc.horizon {
            let lo = sc.rate_min[(s, t)];
            // No rate can exceed its bottleneck once every other source sits at its minimum.
            let bottleneck = sc.routing[t]
                .route(s)
                .iter()
                .map(|&l| sc.capacity[(t, l)] - sc.link_load(&sc.rate_min, t, l) + lo)
                .fold(f64::INFINITY, f64::min);
            let hi = sc.rate_max[(s, t)].min(bottleneck);
            if hi > lo {
                free.push(FreeRate { s, t, lo, hi });
            } else {
                base[(s, t)] = lo;
            }
        }
    }

    let evaluate = |point: &[f64]| -> Option<(f64, Grid, Grid)> {
        let mut rates = base.clone();
        for (f, &v) in free.iter().zip(point) {
            rates[(f.s, f.t)] = v;
        }
        let mut margins = Grid::zeros(sc.horizon, sc.links);
        for t in 0..sc.horizon {
            for l in 0..sc.links {
                let left = sc.capacity[(t, l)] - sc.link_load(&rates, t, l);
                if left < 0.0 {
                    return None;
                }
                if touched[(t, l)] > 0.0 {
                    margins[(t, l)] = left;
                }
            }
        }
        for c in &sc.contracts {
            let mut avg = 0.0;
            for &t in &c.window {
                for &l in sc.routing[t].route(c.source) {
                    let sigma = margins[(t, l)];
                    if sigma <= 0.0 {
                        return None;
                    }
                    avg += c.weight() * sc.delay_model[l].value(sigma);
                }
            }
            if avg > c.bound {
                return None;
            }
        }
        Some((sc.total_utility(&rates), rates, margins))
    };

    let d = free.len();
    if d == 0 {
        let (utility, rates, margins) = evaluate(&[]).ok_or(Error::NoFeasiblePoint)?;
        return Ok(OracleResult { utility, allocation: sc.allocation(rates, margins), evaluated: 1 });
    }

    let per_axis = (LEVEL_BUDGET.powf(1.0 / d as f64).floor() as usize).clamp(3, 2001);
    let mut spacing: Vec<f64> = free.iter().map(|f| ((f.hi - f.lo) / (per_axis - 1) as f64).max(resolution)).collect();
    let mut axes: Vec<Vec<f64>> = free
        .iter()
        .zip(&spacing)
        .map(|(f, &h)| axis_points(f.lo, f.hi, f.lo, h))
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut evaluated = 0;

    loop {
        let total: usize = axes.iter().map(Vec::len).product();
        evaluated += total;
        let level_best = (0..total)
            .into_par_iter()
            .filter_map(|idx| {
                let point = decode(idx, &axes);
                evaluate(&point).map(|(u, _, _)| (u, idx))
            })
            .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
        if let Some((u, idx)) = level_best {
            if best.as_ref().is_none_or(|(bu, _)| u > *bu) {
                best = Some((u, decode(idx, &axes)));
            }
        }
        let Some((_, center)) = &best else {
            if spacing.iter().all(|&h| h <= resolution) {
                return Err(Error::NoFeasiblePoint);
            }
            // Nothing feasible yet: refine the whole box.
            for (i, f) in free.iter().enumerate() {
                spacing[i] = (spacing[i] / 2.0).max(resolution);
                axes[i] = axis_points(f.lo, f.hi, f.lo, spacing[i]);
            }
            if axes.iter().map(Vec::len).product::<usize>() as f64 > 50.0 * LEVEL_BUDGET {
                return Err(Error::NoFeasiblePoint);
            }
            continue;
        };
        if spacing.iter().all(|&h| h <= resolution) {
            break;
        }
        let half = (per_axis - 1) / 2;
        for (i, f) in free.iter().enumerate() {
            let window = 2.0 * spacing[i];
            let h = (window / half as f64).max(resolution);
            spacing[i] = h;
            let lo = (center[i] - window).max(f.lo);
            let hi = (center[i] + window).min(f.hi);
            axes[i] = axis_points(lo, hi, center[i], h);
        }
    }

    let (_, point) = best.expect("incumbent exists after refinement");
    let (utility, rates, margins) = evaluate(&point).expect("incumbent is feasible");
    Ok(OracleResult { utility, allocation: sc.allocation(rates, margins), evaluated })
}

/// Points of `[lo, hi]` on the lattice `anchor + k·h`, plus both endpoints.
fn axis_points(lo: f64, hi: f64, anchor: f64, h: f64) -> Vec<f64> {
    let mut pts = vec![lo];
    let k0 = ((lo - anchor) / h).ceil() as i64;
    let k1 = ((hi - anchor) / h).floor() as i64;
    for k in k0..=k1 {
        let v = anchor + k as f64 * h;
        if v > lo && v < hi {
            pts.push(v);
        }
    }
    if hi > lo {
        pts.push(hi);
    }
    pts
}

fn decode(mut idx: usize, axes: &[Vec<f64>]) -> Vec<f64> {
    axes.iter()
        .map(|a| {
            let v = a[idx % a.len()];
            idx /= a.len();
            v
        })
        .collect()
}

/// Field-wise differences between two allocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDiff {
    pub max_abs: f64,
    pub max_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub rates: FieldDiff,
    pub margins: FieldDiff,
    pub delays: FieldDiff,
    /// `U(a) − U(b)`; only available when a scenario is supplied.
    pub utility_gap: Option<f64>,
}

fn field_diff(a: &Grid, b: &Grid) -> FieldDiff {
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        let diff = (x - y).abs();
        if diff.is_nan() {
            max_abs = f64::INFINITY;
            max_rel = f64::INFINITY;
            continue;
        }
        max_abs = max_abs.max(diff);
        let scale = x.abs().max(y.abs());
        if scale > 0.0 && diff > 0.0 {
            max_rel = max_rel.max(if diff.is_finite() { diff / scale } else { f64::INFINITY });
        }
    }
    FieldDiff { max_abs, max_rel }
}

pub fn compare(a: &Allocation, b: &Allocation, sc: Option<&Scenario>) -> Result<DiffReport> {
    for (name, x, y) in [("rates", &a.rates, &b.rates), ("margins", &a.margins, &b.margins), ("delays", &a.delays, &b.delays)] {
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch(format!("{name}: {:?} vs {:?}", x.shape(), y.shape())));
        }
    }
    Ok(DiffReport {
        rates: field_diff(&a.rates, &b.rates),
        margins: field_diff(&a.margins, &b.margins),
        delays: field_diff(&a.delays, &b.delays),
        utility_gap: sc.map(|sc| sc.total_utility(&a.rates) - sc.total_utility(&b.rates)),
    })
}

/// Least-squares multipliers for a primal point.
///
/// Only constraints with slack at most `active_tol` receive a multiplier.
/// The stationarity equations of interior rates and positive margins are
/// solved in the least-squares sense and negative results are clipped.
pub fn recover_duals(sc: &Scenario, alloc: &Allocation, active_tol: f64) -> DualState {
    let slack = ConstraintSlack::of(sc, alloc);
    let mut cap_index = Vec::new();
    for t in 0..sc.horizon {
        for l in 0..sc.links {
            if slack.capacity[(t, l)] <= active_tol {
                cap_index.push((t, l));
            }
        }
    }
    let contract_index: Vec<usize> = (0..sc.contracts.len()).filter(|&k| slack.contracts[k] <= active_tol).collect();
    let n = cap_index.len() + contract_index.len();
    let mut dual = DualState::uniform(sc, 0.0);
    if n == 0 {
        return dual;
    }

    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for s in 0..sc.sources {
        for t in 0..sc.horizon {
            let x = alloc.rates[(s, t)];
            if x <= sc.rate_min[(s, t)] + active_tol || x >= sc.rate_max[(s, t)] - active_tol {
                continue;
            }
            let mut row = vec![0.0; n];
            for (j, &(tt, l)) in cap_index.iter().enumerate() {
                if tt == t && sc.routing[t].uses(l, s) {
                    row[j] = 1.0;
                }
            }
            rows.push((row, sc.utility(s, t).deriv(x)));
        }
    }
    for t in 0..sc.horizon {
        for l in 0..sc.links {
            let sigma = alloc.margins[(t, l)];
            if sigma <= active_tol {
                continue;
            }
            let mut row = vec![0.0; n];
            if let Some(j) = cap_index.iter().position(|&p| p == (t, l)) {
                row[j] = 1.0;
            }
            let slope = sc.delay_model[l].deriv(sigma);
            for (j, &k) in contract_index.iter().enumerate() {
                let c = &sc.contracts[k];
                if c.covers(t) && sc.routing[t].uses(l, c.source) {
                    row[cap_index.len() + j] = c.weight() * slope;
                }
            }
            rows.push((row, 0.0));
        }
    }
    if rows.is_empty() {
        return dual;
    }
    let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let Ok(sol) = a.svd(true, true).solve(&b, 1e-12) else {
        return dual;
    };
    for (j, &(t, l)) in cap_index.iter().enumerate() {
        dual.lambda[(t, l)] = sol[j].max(0.0);
    }
    for (j, &k) in contract_index.iter().enumerate() {
        dual.mu[k] = sol[cap_index.len() + j].max(0.0);
    }
    dual
}

/// Realized window averages of every contract under `alloc`.
pub fn contract_averages(sc: &Scenario, alloc: &Allocation) -> Vec<f64> {
    sc.contracts.iter().map(|c| contract_average_delay(&alloc.delays, c)).collect()
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::functions::{DelaySpec, UtilitySpec};
    use crate::model::{DelayContract, Routing};

    fn two_on_one(capacity: f64) -> Scenario {
        Scenario {
            horizon: 1,
            links: 1,
            sources: 2,
            routing: vec![Routing::from_routes(1, &[vec![0], vec![0]])],
            capacity: Grid::filled(1, 1, capacity),
            rate_min: Grid::filled(2, 1, 0.1),
            rate_max: Grid::filled(2, 1, 10.0),
            utilities: vec![vec![UtilitySpec::Log]; 2],
            delay_model: vec![DelaySpec::Mm1 { q: 1.0 }],
            contracts: vec![],
        }
    }

    #[test]
    fn analytic_optimum_has_zero_residuals() {
        let sc = two_on_one(2.0);
        let alloc = sc.allocation(Grid::filled(2, 1, 1.0), Grid::zeros(1, 1));
        let dual = DualState { lambda: Grid::filled(1, 1, 1.0), mu: vec![] };
        let k = kkt_check(&sc, &alloc, &dual);
        assert!(k.max_residual() <= 1e-12, "{k:?}");
        assert_eq!(k.dual_feasibility, 1.0);

        let zero = DualState { lambda: Grid::zeros(1, 1), mu: vec![] };
        assert_relative_eq!(kkt_check(&sc, &alloc, &zero).stationarity, 1.0);
    }

    #[test]
    fn oracle_symmetric_split() {
        let r = grid_oracle(&two_on_one(2.0), 1e-3).unwrap();
        assert!((r.allocation.rates[(0, 0)] - 1.0).abs() <= 2e-3);
        assert!((r.allocation.rates[(1, 0)] - 1.0).abs() <= 2e-3);
        assert!(r.utility.abs() <= 1e-5);
    }

    #[test]
    fn oracle_with_binding_contract() {
        let mut sc = two_on_one(2.0);
        sc.contracts = vec![DelayContract::new(0, [0], 1.0)];
        let r = grid_oracle(&sc, 1e-3).unwrap();
        assert!((r.allocation.rates[(0, 0)] - 0.5).abs() <= 2e-3, "{:?}", r.allocation.rates);
        assert!((r.allocation.rates[(1, 0)] - 0.5).abs() <= 2e-3);
        assert!(r.allocation.margins[(0, 0)] >= 1.0 - 1e-12);
    }

    #[test]
    fn oracle_reports_infeasible() {
        let mut sc = two_on_one(2.0);
        sc.contracts = vec![DelayContract::new(0, [0], 0.1)];
        let err = grid_oracle(&sc, 1e-3).unwrap_err();
        assert_eq!(err.to_string(), "no feasible point");
    }

    #[test]
    fn oracle_rejects_large_instances() {
        let mut sc = two_on_one(2.0);
        sc.horizon = 3;
        let err = grid_oracle(&sc, 1e-3).unwrap_err();
        assert!(err.to_string().contains("instance too large for oracle"));
    }

    #[test]
    fn compare_identical_and_mismatch() {
        let sc = two_on_one(2.0);
        let a = sc.allocation(Grid::filled(2, 1, 1.0), Grid::zeros(1, 1));
        let r = compare(&a, &a, Some(&sc)).unwrap();
        assert_eq!(r.rates, FieldDiff { max_abs: 0.0, max_rel: 0.0 });
        assert_eq!(r.utility_gap, Some(0.0));
        let b = Allocation { rates: Grid::zeros(3, 1), ..a.clone() };
        assert!(compare(&a, &b, None).is_err());
    }

    #[test]
    fn recovered_duals_match_analytic() {
        let mut sc = two_on_one(2.0);
        sc.contracts = vec![DelayContract::new(0, [0], 1.0)];
        let alloc = sc.allocation(Grid::filled(2, 1, 0.5), Grid::filled(1, 1, 1.0));
        let dual = recover_duals(&sc, &alloc, 1e-9);
        // U'(0.5) = 2 = λ and λ = μ·q/σ² gives μ = 2.
        assert_relative_eq!(dual.lambda[(0, 0)], 2.0, epsilon = 1e-9);
        assert_relative_eq!(dual.mu[0], 2.0, epsilon = 1e-9);
        assert!(kkt_check(&sc, &alloc, &dual).max_residual() < 1e-9);
    }
}
