use thiserror::Error;

use crate::equilibrium::StabilityResult;

pub type Result<T> = std::result::Result<T, GraspError>;

#[derive(Debug, Error)]
pub enum GraspError {
    #[error("invalid normal {0:?}: expected a finite unit vector")]
    InvalidNormal([f64; 3]),
    #[error("object has no surface points")]
    EmptyObject,
    #[error("hand surface has no samples")]
    EmptyHand,
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("invalid contact state: {0}")]
    InvalidContactState(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeError { expected: usize, found: usize },
    #[error("bin count must be at least 3, got {0}")]
    InvalidBinCount(usize),
    #[error("log-force spread must be positive, got {0}")]
    InvalidSpread(f64),
    #[error("force must be finite and non-negative, got {0}")]
    InvalidForce(f64),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("hand part id {0} is outside 1..=16")]
    InvalidPart(u8),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("contact style infeasible: {0}")]
    StyleInfeasible(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("stability solver did not converge (best energy {})", .0.energy)]
    Solver(Box<StabilityResult>),
    #[error("optimization diverged: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GraspError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            GraspError::Solver(_) | GraspError::NonFinite(_) => 3,
            GraspError::Io(_) | GraspError::File { .. } => 1,
            _ => 2,
        }
    }
}
