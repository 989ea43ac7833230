use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scenario failed validation: {}", format_violations(.0))]
    InvalidScenario(Vec<Violation>),

    #[error("price must be positive for log-family utilities (got {0})")]
    NonPositivePrice(f64),

    #[error("inverse derivative undefined for nonnegative slope (got {0})")]
    NonNegativeSlope(f64),

    #[error("degenerate working domain [{lo}, {hi}]")]
    DegenerateDomain { lo: f64, hi: f64 },

    #[error("Q undefined; configure a positive dual floor (mu_min = {0})")]
    NonPositiveDualFloor(f64),

    #[error("invalid solver parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("barrier domain violated at variable {index} (value {value})")]
    BarrierDomain { index: usize, value: f64 },

    #[error("degenerate splitting (isolated constraint row {0})")]
    DegenerateSplitting(usize),

    #[error("cannot initialize interior point: {0}")]
    CannotInitialize(String),

    #[error("dual system is singular")]
    SingularSystem,

    #[error("instance too large for oracle ({dims} decision dimensions, cap {cap})")]
    InstanceTooLarge { dims: usize, cap: usize },

    #[error("no feasible point")]
    NoFeasiblePoint,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
