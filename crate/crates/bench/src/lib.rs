//! Benchmark fixtures.

use dnumkit_core::newton::{
    dense_dual_matrix, initial_point, solve_direct, solve_splitting, DelayRow, StackedProblem, StructuredOperator,
};
use dnumkit_core::Scenario;

/// One Newton dual system `P ω = −A H⁻¹ ∇f` at the barrier's starting point.
pub struct DualSystem {
    pub problem: StackedProblem,
    inv_h: Vec<f64>,
    jac: Vec<DelayRow>,
    pub rhs: Vec<f64>,
}

impl DualSystem {
    pub fn at_initial_point(sc: &Scenario, beta: f64) -> dnumkit_core::Result<Self> {
        let problem = StackedProblem::assemble(sc, beta)?;
        let z = initial_point(&problem)?;
        let inv_h = problem.inverse_hessian(&z)?;
        let jac = problem.jacobian(&z);
        let hg: Vec<f64> = inv_h.iter().zip(problem.gradient(&z)).map(|(h, g)| h * g).collect();
        let rhs = problem.apply_a(&jac, &hg).iter().map(|v| -v).collect();
        Ok(DualSystem { problem, inv_h, jac, rhs })
    }

    /// Splitting iterations from zero; returns the iteration count.
    pub fn splitting(&self, tol: f64) -> usize {
        let op = StructuredOperator::new(&self.problem, &self.inv_h, &self.jac);
        let start = vec![0.0; self.problem.n_rows()];
        solve_splitting(&op, &self.rhs, &start, 1_000_000, tol, false).expect("splitting solve").iterations
    }

    /// Forms `P` densely and factors it.
    pub fn direct(&self) -> Vec<f64> {
        let p = dense_dual_matrix(&self.problem.constraint_matrix(&self.jac), &self.inv_h);
        solve_direct(&p, &self.rhs).expect("direct solve")
    }
}
