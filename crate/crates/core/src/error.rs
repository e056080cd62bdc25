use thiserror::Error;

/// Errors raised by the geometry backends, solvers and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    #[error("resolution: {cells} cells is below the minimum of {min}")]
    Resolution { cells: usize, min: usize },

    #[error("grid mismatch: expected {expected} samples, got {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("entropy undefined on this branch: {0}")]
    EntropyUndefined(String),

    #[error("tau bracket failure: {0}")]
    Bracket(String),

    #[error("second variation only defined at critical points (soliton residual {residual:.3e})")]
    NotASoliton { residual: f64 },

    #[error("resonant v_h system: eigenvalue {eigenvalue} within {gap:.3e} of 1/(2 tau)")]
    Resonant { eigenvalue: f64, gap: f64 },

    #[error("not an ISD generator: {0}")]
    NotIsdGenerator(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}
