//! Problem data for multi-period rate allocation with delay contracts.
//!
//! Indices are 0-based everywhere in this crate. Files and CSV outputs use
//! 1-based periods, links and sources; that conversion lives in
//! [`crate::scenarios`] and the CLI only.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::functions::{DelayFunction, DelaySpec, UtilityFunction, UtilitySpec};
use crate::grid::Grid;

/// Margin substituted for `σ = 0` when a delay has to be reported.
pub const MARGIN_FLOOR: f64 = 1e-9;

/// Link/source incidence for one period, with cached adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    links: usize,
    sources: usize,
    incidence: Vec<bool>,
    routes: Vec<Vec<usize>>,
    users: Vec<Vec<usize>>,
}

impl Routing {
    /// `incidence[l][s]` is true when source `s` crosses link `l`.
    pub fn from_incidence(incidence: &[Vec<bool>]) -> Routing {
        let links = incidence.len();
        let sources = incidence.first().map_or(0, Vec::len);
        let flat: Vec<bool> = incidence.iter().flat_map(|row| row.iter().copied()).collect();
        assert_eq!(flat.len(), links * sources, "ragged incidence matrix");
        Self::build(links, sources, flat)
    }

    /// Builds from a list of source indices per link. Out-of-range entries
    /// are reported back instead of being stored.
    pub fn from_link_users(links: usize, sources: usize, users: &[Vec<usize>]) -> (Routing, Vec<(usize, usize)>) {
        let mut flat = vec![false; links * sources];
        let mut rejected = Vec::new();
        for (l, list) in users.iter().enumerate() {
            for &s in list {
                if l < links && s < sources {
                    flat[l * sources + s] = true;
                } else {
                    rejected.push((l, s));
                }
            }
        }
        (Self::build(links, sources, flat), rejected)
    }

    /// Every source uses the links listed in `routes[s]`.
    pub fn from_routes(links: usize, routes: &[Vec<usize>]) -> Routing {
        let sources = routes.len();
        let mut flat = vec![false; links * sources];
        for (s, route) in routes.iter().enumerate() {
            for &l in route {
                flat[l * sources + s] = true;
            }
        }
        Self::build(links, sources, flat)
    }

    fn build(links: usize, sources: usize, incidence: Vec<bool>) -> Routing {
        let mut routes = vec![Vec::new(); sources];
        let mut users = vec![Vec::new(); links];
        for l in 0..links {
            for s in 0..sources {
                if incidence[l * sources + s] {
                    routes[s].push(l);
                    users[l].push(s);
                }
            }
        }
        Routing { links, sources, incidence, routes, users }
    }

    pub fn links(&self) -> usize {
        self.links
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn uses(&self, l: usize, s: usize) -> bool {
        self.incidence[l * self.sources + s]
    }

    /// Links crossed by source `s`, ascending.
    pub fn route(&self, s: usize) -> &[usize] {
        &self.routes[s]
    }

    /// Sources crossing link `l`, ascending.
    pub fn users(&self, l: usize) -> &[usize] {
        &self.users[l]
    }

    pub fn user_lists(&self) -> &[Vec<usize>] {
        &self.users
    }

    /// Same routing with sources renumbered: new source `i` is old `perm[i]`.
    pub fn permute_sources(&self, perm: &[usize]) -> Routing {
        let routes: Vec<Vec<usize>> = perm.iter().map(|&old| self.routes[old].clone()).collect();
        Routing::from_routes(self.links, &routes)
    }
}

/// One averaged end-to-end delay requirement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayContract {
    pub source: usize,
    /// Sorted, duplicate-free periods the average runs over.
    pub window: Vec<usize>,
    pub bound: f64,
}

impl DelayContract {
    pub fn new(source: usize, window: impl IntoIterator<Item = usize>, bound: f64) -> Self {
        let mut window: Vec<usize> = window.into_iter().collect();
        window.sort_unstable();
        window.dedup();
        DelayContract { source, window, bound }
    }

    /// Entry of the delay-indicator row for each period in the window.
    pub fn weight(&self) -> f64 {
        1.0 / self.window.len() as f64
    }

    pub fn covers(&self, t: usize) -> bool {
        self.window.binary_search(&t).is_ok()
    }

    /// Indicator row over a horizon of `horizon` periods.
    pub fn indicator_row(&self, horizon: usize) -> Vec<f64> {
        let w = self.weight();
        (0..horizon).map(|t| if self.covers(t) { w } else { 0.0 }).collect()
    }
}

/// Full problem data over one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub horizon: usize,
    pub links: usize,
    pub sources: usize,
    /// One routing matrix per period.
    pub routing: Vec<Routing>,
    /// `T × L`, kbps.
    pub capacity: Grid,
    /// `S × T` minimum rates.
    pub rate_min: Grid,
    /// `S × T` maximum rates.
    pub rate_max: Grid,
    /// `S × T` utilities, indexed `[s][t]`.
    pub utilities: Vec<Vec<UtilitySpec>>,
    /// One delay model per link.
    pub delay_model: Vec<DelaySpec>,
    pub contracts: Vec<DelayContract>,
}

impl Scenario {
    pub fn utility(&self, s: usize, t: usize) -> &UtilitySpec {
        &self.utilities[s][t]
    }

    /// Aggregate utility `Σ_s Σ_t U_st(x_st)`.
    pub fn total_utility(&self, rates: &Grid) -> f64 {
        let mut total = 0.0;
        for s in 0..self.sources {
            for t in 0..self.horizon {
                total += self.utilities[s][t].value(rates[(s, t)]);
            }
        }
        total
    }

    /// `Σ_s (R_t)_ls x_st`.
    pub fn link_load(&self, rates: &Grid, t: usize, l: usize) -> f64 {
        self.routing[t].users(l).iter().map(|&s| rates[(s, t)]).sum()
    }

    /// Number of delay contracts held by each source.
    pub fn contracts_per_source(&self) -> Vec<usize> {
        let mut counts = vec![0; self.sources];
        for c in &self.contracts {
            if c.source < self.sources {
                counts[c.source] += 1;
            }
        }
        counts
    }

    /// Contract indices ordered by source (stable within a source). This is
    /// the row order of the stacked delay-indicator matrix.
    pub fn contracts_by_source(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.contracts.len()).collect();
        order.sort_by_key(|&k| self.contracts[k].source);
        order
    }

    /// Same scenario without any delay contract.
    pub fn without_contracts(&self) -> Scenario {
        Scenario { contracts: Vec::new(), ..self.clone() }
    }

    /// Delays `φ` for the given margins, with `σ = 0` replaced by the floor.
    pub fn delays(&self, margins: &Grid) -> Grid {
        Grid::from_fn(self.sources, self.horizon, |s, t| {
            route_delay(margins, &self.routing[t], &self.delay_model, s, t, Some(MARGIN_FLOOR))
        })
    }

    pub fn allocation(&self, rates: Grid, margins: Grid) -> Allocation {
        let delays = self.delays(&margins);
        Allocation { rates, margins, delays }
    }

    /// Renumbers sources: new source `i` is old source `perm[i]`.
    pub fn permute_sources(&self, perm: &[usize]) -> Scenario {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let pick = |g: &Grid| Grid::from_fn(self.sources, self.horizon, |s, t| g[(perm[s], t)]);
        Scenario {
            routing: self.routing.iter().map(|r| r.permute_sources(perm)).collect(),
            rate_min: pick(&self.rate_min),
            rate_max: pick(&self.rate_max),
            utilities: perm.iter().map(|&old| self.utilities[old].clone()).collect(),
            contracts: self
                .contracts
                .iter()
                .map(|c| DelayContract { source: inverse[c.source], ..c.clone() })
                .collect(),
            ..self.clone()
        }
    }
}

/// Human-readable validation failure naming the field and index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub index: Vec<usize>,
    pub message: String,
}

impl Violation {
    pub fn new(field: &str, index: Vec<usize>, message: impl Into<String>) -> Self {
        Violation { field: field.to_string(), index, message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.field)?;
        if !self.index.is_empty() {
            let idx: Vec<String> = self.index.iter().map(|i| i.to_string()).collect();
            write!(f, "[{}]", idx.join(","))?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Checks every structural invariant. An empty list means the scenario is ok.
pub fn validate(sc: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let (t_n, l_n, s_n) = (sc.horizon, sc.links, sc.sources);
    if t_n == 0 {
        out.push(Violation::new("horizon", vec![], "horizon must contain at least one period"));
    }
    if sc.routing.len() != t_n {
        out.push(Violation::new(
            "routing",
            vec![],
            format!("expected {t_n} routing matrices, found {}", sc.routing.len()),
        ));
    }
    for (t, r) in sc.routing.iter().enumerate() {
        if r.links() != l_n || r.sources() != s_n {
            out.push(Violation::new(
                "routing",
                vec![t],
                format!("shape {}x{} does not match {l_n}x{s_n}", r.links(), r.sources()),
            ));
        }
    }
    if sc.capacity.shape() != (t_n, l_n) {
        out.push(Violation::new("capacity", vec![], format!("shape must be {t_n}x{l_n}")));
    } else {
        for t in 0..t_n {
            for l in 0..l_n {
                let c = sc.capacity[(t, l)];
                if !(c > 0.0 && c.is_finite()) {
                    out.push(Violation::new("capacity", vec![t, l], "capacity must be strictly positive"));
                }
            }
        }
    }
    let bounds_ok = sc.rate_min.shape() == (s_n, t_n) && sc.rate_max.shape() == (s_n, t_n);
    if !bounds_ok {
        out.push(Violation::new("rate_bounds", vec![], format!("shape must be {s_n}x{t_n}")));
    } else {
        for s in 0..s_n {
            for t in 0..t_n {
                let (w, big_w) = (sc.rate_min[(s, t)], sc.rate_max[(s, t)]);
                if !(w > 0.0 && w.is_finite()) {
                    out.push(Violation::new("rate_min", vec![s, t], "rate_min must be strictly positive"));
                }
                if !(big_w >= w && big_w.is_finite()) {
                    out.push(Violation::new("rate_max", vec![s, t], "rate_max must be at least rate_min"));
                }
            }
        }
    }
    if sc.utilities.len() != s_n || sc.utilities.iter().any(|row| row.len() != t_n) {
        out.push(Violation::new("utilities", vec![], format!("shape must be {s_n}x{t_n}")));
    } else {
        for (s, row) in sc.utilities.iter().enumerate() {
            for (t, u) in row.iter().enumerate() {
                if let UtilitySpec::WeightedLog { weight } = u {
                    if !(*weight > 0.0 && weight.is_finite()) {
                        out.push(Violation::new("utilities", vec![s, t], "utility weight must be positive"));
                    }
                }
            }
        }
    }
    if sc.delay_model.len() != l_n {
        out.push(Violation::new("delay_model", vec![], format!("expected {l_n} delay models")));
    }
    for (l, d) in sc.delay_model.iter().enumerate() {
        let DelaySpec::Mm1 { q } = d;
        if !(*q > 0.0 && q.is_finite()) {
            out.push(Violation::new("delay_model", vec![l], "q must be strictly positive"));
        }
    }
    for (k, c) in sc.contracts.iter().enumerate() {
        if c.source >= s_n {
            out.push(Violation::new("contracts", vec![k], "source out of range"));
        }
        if c.window.is_empty() {
            out.push(Violation::new("contracts", vec![k], "window must be nonempty"));
        }
        if c.window.iter().any(|&t| t >= t_n) {
            out.push(Violation::new("contracts", vec![k], "window out of horizon"));
        }
        if !(c.bound > 0.0 && c.bound.is_finite()) {
            out.push(Violation::new("contracts", vec![k], "bound must be strictly positive"));
        }
    }
    out
}

/// End-to-end delay `φ_st = Σ_l (R_t)_ls D(σ_tl)`.
///
/// With `floor = None` a nonpositive margin on the route yields
/// `f64::INFINITY`; otherwise the margin is raised to the floor first.
pub fn route_delay(
    margins: &Grid,
    routing: &Routing,
    delay_model: &[DelaySpec],
    s: usize,
    t: usize,
    floor: Option<f64>,
) -> f64 {
    let mut phi = 0.0;
    for &l in routing.route(s) {
        let sigma = margins[(t, l)];
        let sigma = match floor {
            Some(f) => sigma.max(f),
            None if sigma <= 0.0 => return f64::INFINITY,
            None => sigma,
        };
        phi += delay_model[l].value(sigma);
    }
    phi
}

/// `(1/|window|) Σ_{t ∈ window} φ_st` for the contract's source.
pub fn contract_average_delay(delays: &Grid, contract: &DelayContract) -> f64 {
    let w = contract.weight();
    contract.window.iter().map(|&t| w * delays[(contract.source, t)]).sum()
}

/// Primal solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// `S × T`.
    pub rates: Grid,
    /// `T × L`.
    pub margins: Grid,
    /// `S × T`, derived from the margins.
    pub delays: Grid,
}

/// Capacity prices `λ` (`T × L`) and one delay price per contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: Grid,
    pub mu: Vec<f64>,
}

impl DualState {
    pub fn uniform(sc: &Scenario, value: f64) -> Self {
        DualState { lambda: Grid::filled(sc.horizon, sc.links, value), mu: vec![value; sc.contracts.len()] }
    }

    pub fn min_entry(&self) -> f64 {
        self.mu.iter().copied().fold(self.lambda.min(), f64::min)
    }
}

/// KKT residual families of the rate-allocation program, each a max-norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Projected-gradient residual of the Lagrangian over rates and margins.
    pub stationarity: f64,
    /// Max of capacity and contract violations.
    pub primal_feasibility: f64,
    pub capacity_violation: f64,
    pub contract_violation: f64,
    /// Smallest dual entry (negative means infeasible duals).
    pub dual_feasibility: f64,
    /// Max `|multiplier × slack|`.
    pub complementarity: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.complementarity)
            .max((-self.dual_feasibility).max(0.0))
    }

    pub fn within(&self, tol: &KktTolerance) -> bool {
        self.stationarity <= tol.stationarity
            && self.capacity_violation <= tol.capacity
            && self.contract_violation <= tol.contract
            && self.complementarity <= tol.complementarity
            && self.dual_feasibility >= 0.0
    }
}

/// Acceptance thresholds applied to a [`KktReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktTolerance {
    pub stationarity: f64,
    pub capacity: f64,
    pub contract: f64,
    pub complementarity: f64,
}

impl Default for KktTolerance {
    fn default() -> Self {
        KktTolerance { stationarity: 1e-3, capacity: 1e-6, contract: 1e-3, complementarity: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// Dual prices grew past the ceiling while violations did not shrink.
    LikelyInfeasible,
    /// The max-margin probe proved the constraints cannot be met.
    Infeasible,
    /// Line search could not make progress.
    Stalled,
}

/// Per-constraint slacks (`≥ 0` means satisfied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSlack {
    /// `c_tl − σ_tl − Σ_s (R_t)_ls x_st`, `T × L`.
    pub capacity: Grid,
    /// `d_k − M_k φ` per contract.
    pub contracts: Vec<f64>,
}

impl ConstraintSlack {
    pub fn of(sc: &Scenario, alloc: &Allocation) -> Self {
        let capacity = Grid::from_fn(sc.horizon, sc.links, |t, l| {
            sc.capacity[(t, l)] - alloc.margins[(t, l)] - sc.link_load(&alloc.rates, t, l)
        });
        let contracts =
            sc.contracts.iter().map(|c| c.bound - contract_average_delay(&alloc.delays, c)).collect();
        ConstraintSlack { capacity, contracts }
    }
}

/// One row of the optional per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub dual_objective: f64,
    pub max_primal_change: f64,
    pub max_kkt_residual: f64,
    /// Inner splitting iterations (Newton solver only).
    pub inner_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: String,
    pub status: SolveStatus,
    pub converged: bool,
    pub iterations: usize,
    /// Aggregate utility of the returned allocation.
    pub objective: f64,
    pub kkt: KktReport,
    pub slack: ConstraintSlack,
    /// Seconds; `None` when timing is not recorded.
    pub wall_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceRow>,
}

/// Exact feasibility test.
///
/// Delays fall as margins grow and margins are bounded by leftover capacity,
/// so the problem is feasible iff minimum rates fit and the contracts hold
/// with every margin at `c − R w`. Returns the first violated constraint.
pub fn max_margin_probe(sc: &Scenario) -> Result<(), String> {
    let mut margins = Grid::zeros(sc.horizon, sc.links);
    for t in 0..sc.horizon {
        for l in 0..sc.links {
            let left = sc.capacity[(t, l)] - sc.link_load(&sc.rate_min, t, l);
            if left < 0.0 {
                return Err(format!(
                    "capacity of link {} at period {} is below the minimum rates ({left:.6} short)",
                    l + 1,
                    t + 1
                ));
            }
            margins[(t, l)] = left;
        }
    }
    let delays = Grid::from_fn(sc.sources, sc.horizon, |s, t| {
        route_delay(&margins, &sc.routing[t], &sc.delay_model, s, t, None)
    });
    for (k, c) in sc.contracts.iter().enumerate() {
        let avg = contract_average_delay(&delays, c);
        if !(avg <= c.bound) {
            return Err(format!(
                "contract {} of source {}: best achievable average delay {avg:.6} exceeds bound {}",
                k + 1,
                c.source + 1,
                c.bound
            ));
        }
    }
    Ok(())
}
