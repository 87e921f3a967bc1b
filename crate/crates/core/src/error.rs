use thiserror::Error;

/// Errors raised by the estimators, tests and the simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:.3e} below tolerance {tolerance:.3e}")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("variable row {row} has zero sample variance")]
    DegenerateVariable { row: usize },

    #[error("sample column {index} has zero row-sample variance")]
    DegenerateSample { index: usize },

    #[error("sandwich variance for variable {index} is not positive ({value:.3e}); the precision estimate is unusable")]
    DegenerateSandwich { index: usize, value: f64 },

    #[error("CLIME column {column} is infeasible at lambda = {lambda}")]
    Infeasible { column: usize, lambda: f64 },

    #[error("CLIME column {column} did not converge within {iterations} iterations")]
    Convergence { column: usize, iterations: usize },

    #[error("lambda tuning failed: {0}")]
    Tuning(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Broad classes of failure, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data or configuration.
    Data,
    /// Numerical breakdown: non-PSD input, infeasible or non-convergent solver.
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NotPsd { .. }
            | Error::DegenerateSandwich { .. }
            | Error::Infeasible { .. }
            | Error::Convergence { .. }
            | Error::Tuning(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
