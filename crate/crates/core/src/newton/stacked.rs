//! Stacked barrier formulation.
//!
//! The decision vector is `z = [x; σ; y; w]`: rates in source-major order
//! (`s·T + t`, matching the column order of the stacked routing matrix),
//! then margins, capacity slacks and delay slacks, the last three indexed
//! `t·L + l` or by contract row. Constraints are
//!
//! ```text
//! R x + σ + y = c            (TL capacity rows)
//! M φ(σ) + w = d             (K delay rows, linearized at each iterate)
//! ```
//!
//! Delay rows are ordered by owning source, so row `v` belongs to source
//! `p(v)` with sources' blocks in order.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::functions::{DelayFunction, DelaySpec, UtilityFunction, UtilitySpec};
use crate::grid::Grid;
use crate::model::{validate, Allocation, DualState, Scenario};

/// `(cell, coefficient)` entries of one linearized delay row, where `cell`
/// is the margin index `t·L + l`.
pub type DelayRow = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct StackedProblem {
    pub periods: usize,
    pub links: usize,
    pub sources: usize,
    pub contracts: usize,
    pub beta: f64,
    /// Adds `(β/w_k)·∂²h_k/∂σ²` to the margin block of the Hessian.
    pub curvature: bool,
    capacity: Vec<f64>,
    rate_lo: Vec<f64>,
    rate_hi: Vec<f64>,
    utility: Vec<UtilitySpec>,
    delay: Vec<DelaySpec>,
    /// Links of each rate variable.
    routes: Vec<Vec<usize>>,
    /// Rate variables on each capacity cell.
    users: Vec<Vec<usize>>,
    /// Scenario contract index of each delay row.
    order: Vec<usize>,
    /// Owning source of each delay row.
    owner: Vec<usize>,
    bound: Vec<f64>,
    /// `(cell, weight)` pairs of each delay row.
    rows: Vec<Vec<(usize, f64)>>,
    /// `(row, weight)` pairs touching each cell.
    cell_rows: Vec<Vec<(usize, f64)>>,
}

impl StackedProblem {
    pub fn assemble(sc: &Scenario, beta: f64) -> Result<StackedProblem> {
        let violations = validate(sc);
        if !violations.is_empty() {
            return Err(Error::InvalidScenario(violations));
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter { name: "beta", reason: "must be positive".into() });
        }
        let (t_n, l_n, s_n) = (sc.horizon, sc.links, sc.sources);
        let mut routes = vec![Vec::new(); s_n * t_n];
        let mut users = vec![Vec::new(); t_n * l_n];
        let mut rate_lo = vec![0.0; s_n * t_n];
        let mut rate_hi = vec![0.0; s_n * t_n];
        let mut utility = Vec::with_capacity(s_n * t_n);
        for s in 0..s_n {
            for t in 0..t_n {
                let i = s * t_n + t;
                rate_lo[i] = sc.rate_min[(s, t)];
                rate_hi[i] = sc.rate_max[(s, t)];
                utility.push(*sc.utility(s, t));
                for &l in sc.routing[t].route(s) {
                    routes[i].push(l);
                    users[t * l_n + l].push(i);
                }
            }
        }
        let order = sc.contracts_by_source();
        let mut rows = Vec::with_capacity(order.len());
        let mut cell_rows = vec![Vec::new(); t_n * l_n];
        for (r, &k) in order.iter().enumerate() {
            let c = &sc.contracts[k];
            let mut row = Vec::new();
            for &t in &c.window {
                for &l in sc.routing[t].route(c.source) {
                    row.push((t * l_n + l, c.weight()));
                    cell_rows[t * l_n + l].push((r, c.weight()));
                }
            }
            rows.push(row);
        }
        Ok(StackedProblem {
            periods: t_n,
            links: l_n,
            sources: s_n,
            contracts: order.len(),
            beta,
            curvature: true,
            capacity: sc.capacity.as_slice().to_vec(),
            rate_lo,
            rate_hi,
            utility,
            delay: sc.delay_model.clone(),
            routes,
            users,
            owner: order.iter().map(|&k| sc.contracts[k].source).collect(),
            bound: order.iter().map(|&k| sc.contracts[k].bound).collect(),
            order,
            rows,
            cell_rows,
        })
    }

    pub fn n_rates(&self) -> usize {
        self.sources * self.periods
    }

    pub fn n_cells(&self) -> usize {
        self.periods * self.links
    }

    /// Length of `z`.
    pub fn dim(&self) -> usize {
        self.n_rates() + 2 * self.n_cells() + self.contracts
    }

    /// Number of constraint rows, `TL + K`.
    pub fn n_rows(&self) -> usize {
        self.n_cells() + self.contracts
    }

    pub fn x_index(&self, s: usize, t: usize) -> usize {
        s * self.periods + t
    }

    pub fn sigma_index(&self, t: usize, l: usize) -> usize {
        self.n_rates() + t * self.links + l
    }

    pub fn y_index(&self, t: usize, l: usize) -> usize {
        self.n_rates() + self.n_cells() + t * self.links + l
    }

    pub fn w_index(&self, r: usize) -> usize {
        self.n_rates() + 2 * self.n_cells() + r
    }

    /// Link of 1-based capacity row `v`.
    pub fn link_of(&self, v: usize) -> usize {
        (v - 1) % self.links + 1
    }

    /// Period of 1-based capacity row `v`.
    pub fn period_of(&self, v: usize) -> usize {
        v.div_ceil(self.links)
    }

    /// Source of 1-based rate variable `v`.
    pub fn rate_source(&self, v: usize) -> usize {
        v.div_ceil(self.periods)
    }

    /// Period of 1-based rate variable `v`.
    pub fn rate_period(&self, v: usize) -> usize {
        (v - 1) % self.periods + 1
    }

    /// Owning source (1-based) of 1-based delay row `v`.
    pub fn contract_source(&self, v: usize) -> usize {
        self.owner[v - 1] + 1
    }

    /// Scenario contract index behind delay row `r`.
    pub fn contract_of_row(&self, r: usize) -> usize {
        self.order[r]
    }

    fn is_fixed(&self, i: usize) -> bool {
        self.rate_hi[i] <= self.rate_lo[i]
    }

    /// Number of logarithmic barrier terms; `m·β` bounds the duality gap.
    pub fn barrier_terms(&self) -> usize {
        let free = (0..self.n_rates()).filter(|&i| !self.is_fixed(i)).count();
        2 * free + 2 * self.n_cells() + self.contracts
    }

    /// `TL × TS` stacked routing matrix.
    pub fn routing_matrix(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.n_cells(), self.n_rates());
        for (cell, list) in self.users.iter().enumerate() {
            for &i in list {
                r[(cell, i)] = 1.0;
            }
        }
        r
    }

    /// `K × TS` block-diagonal delay-indicator matrix.
    pub fn indicator_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.contracts, self.n_rates());
        for (r, row) in self.rows.iter().enumerate() {
            let s = self.owner[r];
            for &(cell, w) in row {
                m[(r, s * self.periods + cell / self.links)] = w;
            }
        }
        m
    }

    /// `[c; d]`.
    pub fn rhs(&self) -> Vec<f64> {
        self.capacity.iter().chain(&self.bound).copied().collect()
    }

    /// `M φ(σ)` for each delay row.
    pub fn delay_map(&self, sigma: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(cell, w)| w * self.delay[cell % self.links].value(sigma[cell])).sum())
            .collect()
    }

    /// Builds `z` from rates and margins with slacks that satisfy every
    /// constraint exactly. `None` when a slack or margin is not positive or
    /// a rate leaves its open box.
    pub fn complete(&self, x: &[f64], sigma: &[f64]) -> Option<Vec<f64>> {
        let mut z = Vec::with_capacity(self.dim());
        for (i, &v) in x.iter().enumerate() {
            if !self.is_fixed(i) && !(v > self.rate_lo[i] && v < self.rate_hi[i]) {
                return None;
            }
            z.push(v);
        }
        if sigma.iter().any(|&s| !(s > 0.0)) {
            return None;
        }
        z.extend_from_slice(sigma);
        for cell in 0..self.n_cells() {
            let load: f64 = self.users[cell].iter().map(|&i| x[i]).sum();
            let y = self.capacity[cell] - load - sigma[cell];
            if !(y > 0.0) {
                return None;
            }
            z.push(y);
        }
        for (r, h) in self.delay_map(sigma).into_iter().enumerate() {
            let w = self.bound[r] - h;
            if !(w > 0.0) {
                return None;
            }
            z.push(w);
        }
        Some(z)
    }

    pub fn split<'a>(&self, z: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let (x, rest) = z.split_at(self.n_rates());
        let (sigma, rest) = rest.split_at(self.n_cells());
        let (y, w) = rest.split_at(self.n_cells());
        (x, sigma, y, w)
    }

    fn check_domain(&self, z: &[f64]) -> Result<()> {
        for (i, &v) in z.iter().enumerate() {
            let ok = if i < self.n_rates() {
                self.is_fixed(i) || (v > self.rate_lo[i] && v < self.rate_hi[i])
            } else {
                v > 0.0
            };
            if !ok {
                return Err(Error::BarrierDomain { index: i, value: v });
            }
        }
        Ok(())
    }

    /// Barrier objective `−Σ U(x) − β Σ log(barrier terms)`; `+∞` outside the domain.
    pub fn objective(&self, z: &[f64]) -> f64 {
        if self.check_domain(z).is_err() {
            return f64::INFINITY;
        }
        let b = self.beta;
        let mut f = 0.0;
        for (i, &x) in z[..self.n_rates()].iter().enumerate() {
            f -= self.utility[i].value(x);
            if !self.is_fixed(i) {
                f -= b * ((x - self.rate_lo[i]).ln() + (self.rate_hi[i] - x).ln());
            }
        }
        f - b * z[self.n_rates()..].iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let b = self.beta;
        z.iter()
            .enumerate()
            .map(|(i, &v)| {
                if i < self.n_rates() {
                    if self.is_fixed(i) {
                        0.0
                    } else {
                        -self.utility[i].deriv(v) - b / (v - self.rate_lo[i]) + b / (self.rate_hi[i] - v)
                    }
                } else {
                    -b / v
                }
            })
            .collect()
    }

    /// Diagonal of `H`. Fixed rates get `+∞`, i.e. a zero inverse.
    pub fn hessian_diag(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(z)?;
        let b = self.beta;
        let mut h: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if i < self.n_rates() {
                    if self.is_fixed(i) {
                        f64::INFINITY
                    } else {
                        let lo = v - self.rate_lo[i];
                        let hi = self.rate_hi[i] - v;
                        -self.utility[i].second_deriv(v) + b / (lo * lo) + b / (hi * hi)
                    }
                } else {
                    b / (v * v)
                }
            })
            .collect();
        if self.curvature {
            let (_, sigma, _, w) = self.split(z);
            for cell in 0..self.n_cells() {
                let d2 = self.delay[cell % self.links].second_deriv(sigma[cell]);
                let extra: f64 = self.cell_rows[cell].iter().map(|&(r, wt)| b / w[r] * wt * d2).sum();
                h[self.n_rates() + cell] += extra;
            }
        }
        Ok(h)
    }

    /// Elementwise inverse of [`hessian_diag`](Self::hessian_diag).
    pub fn inverse_hessian(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.hessian_diag(z)?.into_iter().map(|h| if h.is_infinite() { 0.0 } else { 1.0 / h }).collect())
    }

    /// Delay-row Jacobian entries `∂h_k/∂σ_tl = weight·D'(σ_tl)`.
    pub fn jacobian(&self, z: &[f64]) -> Vec<DelayRow> {
        let (_, sigma, _, _) = self.split(z);
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(cell, w)| (cell, w * self.delay[cell % self.links].deriv(sigma[cell]))).collect())
            .collect()
    }

    /// `A(z) − b`.
    pub fn residual(&self, z: &[f64]) -> Vec<f64> {
        let (x, sigma, y, w) = self.split(z);
        let mut r = Vec::with_capacity(self.n_rows());
        for cell in 0..self.n_cells() {
            let load: f64 = self.users[cell].iter().map(|&i| x[i]).sum();
            r.push(load + sigma[cell] + y[cell] - self.capacity[cell]);
        }
        for (k, h) in self.delay_map(sigma).into_iter().enumerate() {
            r.push(h + w[k] - self.bound[k]);
        }
        r
    }

    /// `A u` for the current linearization.
    pub fn apply_a(&self, jac: &[DelayRow], u: &[f64]) -> Vec<f64> {
        let (ux, us, uy, uw) = self.split(u);
        let mut out = Vec::with_capacity(self.n_rows());
        for cell in 0..self.n_cells() {
            out.push(self.users[cell].iter().map(|&i| ux[i]).sum::<f64>() + us[cell] + uy[cell]);
        }
        for (r, row) in jac.iter().enumerate() {
            out.push(row.iter().map(|&(cell, a)| a * us[cell]).sum::<f64>() + uw[r]);
        }
        out
    }

    /// `Aᵀ ω`.
    pub fn apply_at(&self, jac: &[DelayRow], omega: &[f64]) -> Vec<f64> {
        let (cap, delay) = omega.split_at(self.n_cells());
        let mut out = vec![0.0; self.dim()];
        for (i, route) in self.routes.iter().enumerate() {
            let t = i % self.periods;
            out[i] = route.iter().map(|&l| cap[t * self.links + l]).sum();
        }
        let (nr, nc) = (self.n_rates(), self.n_cells());
        for cell in 0..nc {
            out[nr + cell] = cap[cell];
            out[nr + nc + cell] = cap[cell];
        }
        for (r, row) in jac.iter().enumerate() {
            for &(cell, a) in row {
                out[nr + cell] += a * delay[r];
            }
            out[nr + 2 * nc + r] = delay[r];
        }
        out
    }

    /// Dense constraint Jacobian, `(TL + K) × dim`.
    pub fn constraint_matrix(&self, jac: &[DelayRow]) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_rows(), self.dim());
        let (nr, nc) = (self.n_rates(), self.n_cells());
        for cell in 0..nc {
            for &i in &self.users[cell] {
                a[(cell, i)] = 1.0;
            }
            a[(cell, nr + cell)] = 1.0;
            a[(cell, nr + nc + cell)] = 1.0;
        }
        for (r, row) in jac.iter().enumerate() {
            for &(cell, v) in row {
                a[(nc + r, nr + cell)] += v;
            }
            a[(nc + r, nr + 2 * nc + r)] = 1.0;
        }
        a
    }

    /// `Δz = −H⁻¹(∇f + Aᵀω)`.
    pub fn newton_direction(&self, inv_h: &[f64], grad: &[f64], jac: &[DelayRow], omega: &[f64]) -> Vec<f64> {
        let at = self.apply_at(jac, omega);
        inv_h.iter().zip(grad).zip(&at).map(|((h, g), a)| -h * (g + a)).collect()
    }

    /// Replaces the slack entries of `dz` by the values that keep the
    /// linearized constraints exactly satisfied given the rate and margin
    /// entries.
    pub fn project_slack_direction(&self, jac: &[DelayRow], residual: &[f64], dz: &mut [f64]) {
        let (nr, nc) = (self.n_rates(), self.n_cells());
        for cell in 0..nc {
            let load: f64 = self.users[cell].iter().map(|&i| dz[i]).sum();
            dz[nr + nc + cell] = -(load + dz[nr + cell]) - residual[cell];
        }
        for (r, row) in jac.iter().enumerate() {
            let lin: f64 = row.iter().map(|&(cell, a)| a * dz[nr + cell]).sum();
            dz[nr + 2 * nc + r] = -lin - residual[nc + r];
        }
    }

    pub fn to_allocation(&self, sc: &Scenario, z: &[f64]) -> Allocation {
        let (x, sigma, _, _) = self.split(z);
        let rates = Grid::from_fn(self.sources, self.periods, |s, t| x[s * self.periods + t]);
        let margins = Grid::from_fn(self.periods, self.links, |t, l| sigma[t * self.links + l]);
        sc.allocation(rates, margins)
    }

    /// Capacity and delay prices read from `ω`, in scenario contract order.
    pub fn to_dual(&self, omega: &[f64]) -> DualState {
        let (cap, delay) = omega.split_at(self.n_cells());
        let mut mu = vec![0.0; self.contracts];
        for (r, &v) in delay.iter().enumerate() {
            mu[self.order[r]] = v;
        }
        DualState { lambda: Grid::from_fn(self.periods, self.links, |t, l| cap[t * self.links + l]), mu }
    }

    /// Rows for the structured dual operator.
    pub(crate) fn users(&self) -> &[Vec<usize>] {
        &self.users
    }

    pub(crate) fn rate_route(&self, i: usize) -> &[usize] {
        &self.routes[i]
    }

    pub(crate) fn rate_bounds(&self, i: usize) -> (f64, f64) {
        (self.rate_lo[i], self.rate_hi[i])
    }

    pub(crate) fn capacity(&self, cell: usize) -> f64 {
        self.capacity[cell]
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::model::{DelayContract, Routing};
    use crate::scenarios::gen_exp1;

    fn one_source(horizon: usize, links: usize) -> Scenario {
        Scenario {
            horizon,
            links,
            sources: 1,
            routing: vec![Routing::from_routes(links, &[(0..links).collect()]); horizon],
            capacity: Grid::filled(horizon, links, 5.0),
            rate_min: Grid::filled(1, horizon, 0.1),
            rate_max: Grid::filled(1, horizon, 10.0),
            utilities: vec![vec![UtilitySpec::Log; horizon]],
            delay_model: vec![DelaySpec::Mm1 { q: 1.0 }; links],
            contracts: vec![],
        }
    }

    #[test]
    fn routing_matrix_single_source_two_periods() {
        let p = StackedProblem::assemble(&one_source(2, 1), 1.0).unwrap();
        let r = p.routing_matrix();
        assert_eq!(r.shape(), (2, 2));
        assert_eq!(r, DMatrix::identity(2, 2));
    }

    #[test]
    fn index_maps() {
        let p = StackedProblem::assemble(&one_source(2, 2), 1.0).unwrap();
        assert_eq!(p.link_of(3), 1);
        assert_eq!(p.period_of(3), 2);
        assert_eq!(p.link_of(4), 2);
        assert_eq!(p.rate_source(2), 1);
        assert_eq!(p.rate_period(2), 2);

        let mut sc = one_source(1, 1);
        sc.sources = 2;
        sc.routing = vec![Routing::from_routes(1, &[vec![0], vec![0]])];
        sc.rate_min = Grid::filled(2, 1, 0.1);
        sc.rate_max = Grid::filled(2, 1, 10.0);
        sc.utilities = vec![vec![UtilitySpec::Log]; 2];
        sc.contracts = vec![
            DelayContract::new(1, [0], 3.0),
            DelayContract::new(0, [0], 3.0),
            DelayContract::new(0, [0], 4.0),
        ];
        let p = StackedProblem::assemble(&sc, 1.0).unwrap();
        assert_eq!(p.contract_source(1), 1);
        assert_eq!(p.contract_source(2), 1);
        assert_eq!(p.contract_source(3), 2);
        assert_eq!(p.contract_of_row(2), 0);
        let m = p.indicator_matrix();
        assert_eq!(m.shape(), (3, 2));
        assert_eq!(m[(2, 1)], 1.0);
    }

    #[test]
    fn hessian_entries() {
        let p = StackedProblem::assemble(&one_source(1, 1), 1.0).unwrap();
        let z = p.complete(&[2.0], &[1.0]).unwrap();
        let h = p.hessian_diag(&z).unwrap();
        // −U''(2) plus both box barriers.
        assert_relative_eq!(h[0], 0.25 + 1.0 / 1.9f64.powi(2) + 1.0 / 64.0, epsilon = 1e-12);
        let mut q = StackedProblem::assemble(&one_source(1, 1), 2.0).unwrap();
        q.curvature = false;
        let z = q.complete(&[4.0], &[0.5]).unwrap();
        assert_relative_eq!(z[2], 0.5);
        assert_relative_eq!(q.hessian_diag(&z).unwrap()[2], 8.0);
        assert!(matches!(q.hessian_diag(&[4.0, -0.5, 0.5]), Err(Error::BarrierDomain { index: 1, .. })));
    }

    #[test]
    fn exp1_hessian_positive_and_operator_consistent() {
        let sc = gen_exp1(3);
        let p = StackedProblem::assemble(&sc, 0.5).unwrap();
        let z = crate::newton::initial_point(&p).unwrap();
        assert!(p.hessian_diag(&z).unwrap().iter().all(|&h| h > 0.0));
        assert!(p.residual(&z).iter().all(|r| r.abs() < 1e-12));

        let jac = p.jacobian(&z);
        let a = p.constraint_matrix(&jac);
        let u: Vec<f64> = (0..p.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let au = p.apply_a(&jac, &u);
        let dense = &a * nalgebra::DVector::from_vec(u);
        for (i, v) in au.iter().enumerate() {
            assert_relative_eq!(*v, dense[i], epsilon = 1e-12);
        }
        let omega: Vec<f64> = (0..p.n_rows()).map(|i| (i as f64 * 0.11).cos()).collect();
        let at = p.apply_at(&jac, &omega);
        let dense = a.transpose() * nalgebra::DVector::from_vec(omega);
        for (i, v) in at.iter().enumerate() {
            assert_relative_eq!(*v, dense[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let mut sc = gen_exp1(2);
        sc.contracts.truncate(2);
        let p = StackedProblem::assemble(&sc, 0.3).unwrap();
        let z = crate::newton::initial_point(&p).unwrap();
        let g = p.gradient(&z);
        for i in [0, 7, p.n_rates() + 3, p.dim() - 1] {
            let h = 1e-6;
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (p.objective(&zp) - p.objective(&zm)) / (2.0 * h);
            assert_relative_eq!(fd, g[i], max_relative = 1e-6);
        }
    }
}
