//! Matrix-splitting iteration for the Newton dual system `P ω = rhs` with
//! `P = A H⁻¹ Aᵀ`.
//!
//! With `C = diag(P)` and `B̄` the diagonal of absolute off-diagonal row
//! sums, the update `ω ← ω + (C + B̄)⁻¹ (rhs − P ω)` converges for any
//! symmetric positive definite `P`, because `2(C + B̄) − P` is strictly
//! diagonally dominant. Every component only needs sums over the sources
//! crossing its link or the cells of its contract window.

use nalgebra::{DMatrix, DVector};

use super::stacked::{DelayRow, StackedProblem};
use crate::error::{Error, Result};

/// Symmetric operator `P` of the dual system.
pub trait DualOperator {
    fn dim(&self) -> usize;
    fn apply(&self, omega: &[f64]) -> Vec<f64>;
    fn diagonal(&self) -> Vec<f64>;
    fn abs_offdiag_row_sums(&self) -> Vec<f64>;

    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            for (i, v) in self.apply(&e).into_iter().enumerate() {
                m[(i, j)] = v;
            }
            e[j] = 0.0;
        }
        m
    }
}

/// `A H⁻¹ Aᵀ` evaluated through link and contract aggregates without
/// forming the matrix.
pub struct StructuredOperator<'a> {
    problem: &'a StackedProblem,
    inv_h: &'a [f64],
    jac: &'a [DelayRow],
    /// `(row, ∂h_row/∂σ_cell)` per cell.
    cell_jac: Vec<Vec<(usize, f64)>>,
}

impl<'a> StructuredOperator<'a> {
    pub fn new(problem: &'a StackedProblem, inv_h: &'a [f64], jac: &'a [DelayRow]) -> Self {
        let mut cell_jac = vec![Vec::new(); problem.n_cells()];
        for (r, row) in jac.iter().enumerate() {
            for &(cell, a) in row {
                cell_jac[cell].push((r, a));
            }
        }
        StructuredOperator { problem, inv_h, jac, cell_jac }
    }

    fn product(&self, omega: &[f64], absolute: bool) -> Vec<f64> {
        let p = self.problem;
        let (nr, nc) = (p.n_rates(), p.n_cells());
        let (cap, delay) = omega.split_at(nc);
        let coef = |a: f64| if absolute { a.abs() } else { a };
        let (links, periods) = (p.links, p.periods);

        // Π: rate-side response to the route price of each rate variable.
        let mut pi = vec![0.0; nr];
        for (i, slot) in pi.iter_mut().enumerate() {
            let t = i % periods;
            let price: f64 = p.rate_route(i).iter().map(|&l| cap[t * links + l]).sum();
            *slot = self.inv_h[i] * price;
        }
        // Ψ: margin-side response to the capacity and delay prices of each cell.
        let psi: Vec<f64> = (0..nc)
            .map(|cell| {
                let delay_price: f64 = self.cell_jac[cell].iter().map(|&(r, a)| coef(a) * delay[r]).sum();
                self.inv_h[nr + cell] * (cap[cell] + delay_price)
            })
            .collect();

        let mut out = Vec::with_capacity(self.dim());
        for cell in 0..nc {
            let rates: f64 = p.users()[cell].iter().map(|&i| pi[i]).sum();
            out.push(rates + psi[cell] + self.inv_h[nr + nc + cell] * cap[cell]);
        }
        for (r, row) in self.jac.iter().enumerate() {
            let margins: f64 = row.iter().map(|&(cell, a)| coef(a) * psi[cell]).sum();
            out.push(margins + self.inv_h[nr + 2 * nc + r] * delay[r]);
        }
        out
    }
}

impl DualOperator for StructuredOperator<'_> {
    fn dim(&self) -> usize {
        self.problem.n_rows()
    }

    fn apply(&self, omega: &[f64]) -> Vec<f64> {
        self.product(omega, false)
    }

    fn diagonal(&self) -> Vec<f64> {
        let p = self.problem;
        let (nr, nc) = (p.n_rates(), p.n_cells());
        let mut d = Vec::with_capacity(self.dim());
        for cell in 0..nc {
            let rates: f64 = p.users()[cell].iter().map(|&i| self.inv_h[i]).sum();
            d.push(rates + self.inv_h[nr + cell] + self.inv_h[nr + nc + cell]);
        }
        for (r, row) in self.jac.iter().enumerate() {
            let margins: f64 = row.iter().map(|&(cell, a)| a * a * self.inv_h[nr + cell]).sum();
            d.push(margins + self.inv_h[nr + 2 * nc + r]);
        }
        d
    }

    fn abs_offdiag_row_sums(&self) -> Vec<f64> {
        // Every product term of |A| H⁻¹ |A|ᵀ is nonnegative, so its row sums
        // equal the absolute row sums of P.
        let full = self.product(&vec![1.0; self.dim()], true);
        full.iter().zip(self.diagonal()).map(|(f, d)| (f - d).max(0.0)).collect()
    }
}

/// Explicit matrix, used for small systems and as a reference.
pub struct DenseOperator(pub DMatrix<f64>);

impl DualOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, omega: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(omega)).iter().copied().collect()
    }

    fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().copied().collect()
    }

    fn abs_offdiag_row_sums(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| (0..self.dim()).filter(|&j| j != i).map(|j| self.0[(i, j)].abs()).sum())
            .collect()
    }
}

/// Diagonal of `C̄ = C + B̄`.
pub fn splitting_diagonal(op: &dyn DualOperator) -> Result<Vec<f64>> {
    let cbar: Vec<f64> = op.diagonal().iter().zip(op.abs_offdiag_row_sums()).map(|(c, b)| c + b).collect();
    if let Some(v) = cbar.iter().position(|&c| !(c > 0.0)) {
        return Err(Error::DegenerateSplitting(v + 1));
    }
    Ok(cbar)
}

/// One splitting update `ω_{n+1} = ω_n + C̄⁻¹ (rhs − P ω_n)`.
pub fn dual_splitting_step(op: &dyn DualOperator, cbar: &[f64], rhs: &[f64], omega: &[f64]) -> Vec<f64> {
    let p = op.apply(omega);
    omega.iter().zip(&p).zip(rhs).zip(cbar).map(|(((w, pw), b), c)| w + (b - pw) / c).collect()
}

fn relative_residual(op: &dyn DualOperator, rhs: &[f64], omega: &[f64]) -> f64 {
    let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    op.apply(omega).iter().zip(rhs).fold(0.0f64, |m, (p, b)| m.max((p - b).abs())) / scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplittingOutcome {
    pub omega: Vec<f64>,
    pub iterations: usize,
    /// `‖P ω − rhs‖∞ / max(1, ‖rhs‖∞)` at exit.
    pub residual: f64,
    /// Residual after every iteration when requested.
    pub history: Vec<f64>,
}

/// Iterates until the relative residual is at most `tol` or `max_iters` is reached.
pub fn solve_splitting(
    op: &dyn DualOperator,
    rhs: &[f64],
    start: &[f64],
    max_iters: usize,
    tol: f64,
    record: bool,
) -> Result<SplittingOutcome> {
    let cbar = splitting_diagonal(op)?;
    let mut omega = start.to_vec();
    let mut residual = relative_residual(op, rhs, &omega);
    let mut history = Vec::new();
    let mut iterations = 0;
    while residual > tol && iterations < max_iters {
        omega = dual_splitting_step(op, &cbar, rhs, &omega);
        residual = relative_residual(op, rhs, &omega);
        iterations += 1;
        if record {
            history.push(residual);
        }
    }
    Ok(SplittingOutcome { omega, iterations, residual, history })
}

/// Dense Cholesky solve, falling back to LU.
pub fn solve_direct(p: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let b = DVector::from_column_slice(rhs);
    if let Some(ch) = p.clone().cholesky() {
        return Ok(ch.solve(&b).iter().copied().collect());
    }
    p.clone().lu().solve(&b).map(|x| x.iter().copied().collect()).ok_or(Error::SingularSystem)
}

/// `P` formed densely as `A diag(H⁻¹) Aᵀ`.
pub fn dense_dual_matrix(a: &DMatrix<f64>, inv_h: &[f64]) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= inv_h[j];
    }
    scaled * a.transpose()
}
