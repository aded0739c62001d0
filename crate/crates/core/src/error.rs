//! Error type shared by every solver stage.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration or argument violates a documented precondition.
    InvalidParameter(String),
    /// Two fields or trajectories live on incompatible grids.
    GridMismatch(String),
    /// Initial data for the state system must be nonnegative.
    NegativeInitialData { min_u: f64, min_v: f64 },
    /// The time step violates the donor-cell CFL bound or the bilinear
    /// M-matrix condition `1/dt + 1 - f > 0`.
    StabilityViolation { step: usize, detail: String },
    /// The conjugate-gradient solve did not reach its residual target.
    SolverFailure { detail: String },
    /// The seeded chemical concentration dropped below half its initial
    /// lower bound, so `f = 1 - u^p / v` is no longer trustworthy.
    KappaViolation { step: usize, min_v: f64, kappa: f64 },
    /// Armijo backtracking shrank the step 60 times without descent.
    LineSearchFailure { iter: usize },
    /// File input/output failed (snapshot and report writers).
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::GridMismatch(msg) => write!(f, "grid mismatch: {msg}"),
            Error::NegativeInitialData { min_u, min_v } => write!(
                f,
                "initial data must be nonnegative (min u0 = {min_u:e}, min v0 = {min_v:e})"
            ),
            Error::StabilityViolation { step, detail } => {
                write!(f, "stability violation at step {step}: {detail}")
            }
            Error::SolverFailure { detail } => write!(f, "linear solver failure: {detail}"),
            Error::KappaViolation { step, min_v, kappa } => write!(
                f,
                "kappa violation at step {step}: min v = {min_v:e} < kappa/2 = {:e}",
                kappa / 2.0
            ),
            Error::LineSearchFailure { iter } => {
                write!(f, "line search failed after 60 shrinks at iterate {iter}")
            }
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    /// Stable machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::GridMismatch(_) => "GridMismatch",
            Error::NegativeInitialData { .. } => "NegativeInitialData",
            Error::StabilityViolation { .. } => "StabilityViolation",
            Error::SolverFailure { .. } => "SolverFailure",
            Error::KappaViolation { .. } => "KappaViolation",
            Error::LineSearchFailure { .. } => "LineSearchFailure",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
