//! Multi-period network utility maximization with average-delay contracts.
//!
//! Two solvers are provided: [`dual_solver`] (distributed dual gradient
//! projection) and [`newton`] (equality-constrained barrier Newton with an
//! iterative splitting solve for the dual system). [`mpc`] wraps either one in
//! a receding-horizon loop and [`oracle`] supplies independent checks.

pub mod baseline;
pub mod dual_solver;
pub mod error;
pub mod functions;
pub mod grid;
pub mod model;
pub mod mpc;
pub mod newton;
pub mod oracle;
pub mod scenarios;
pub mod solver;

pub use error::{Error, Result};
pub use functions::{DelayConstants, DelayFunction, DelaySpec, UtilityFunction, UtilitySpec, WorkingDomain};
pub use grid::Grid;
pub use model::{
    validate, Allocation, ConstraintSlack, DelayContract, DualState, KktReport, KktTolerance, Routing, Scenario,
    SolveReport, SolveStatus, TraceRow, Violation,
};
pub use solver::{InnerSolver, Solution};
