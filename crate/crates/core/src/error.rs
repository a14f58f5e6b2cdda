use serde::Serialize;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used for machine-readable CLI exit reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Parse,
    Model,
    Kernel,
    Assembly,
    Solve,
    Audit,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing required matrix `{0}`")]
    MissingMatrix(&'static str),
    #[error("matrix `{matrix}` row {row}: expected at least {expected} columns, found {found}")]
    MalformedRow {
        matrix: &'static str,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("gencost row {row}: unsupported cost ({msg})")]
    UnsupportedCost { row: usize, msg: String },
    #[error("duplicate bus id {0}")]
    DuplicateBus(u64),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("branch {branch}: {msg}")]
    InvalidBranch { branch: usize, msg: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite kernel input {0}")]
    NonFiniteInput(f64),
    #[error("singular linear system (pivot {0})")]
    Singular(usize),
    #[error("assembly: {0}")]
    Assembly(String),
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("variable {index}: empty interior [{lower}, {upper}]")]
    EmptyInterior { index: usize, lower: f64, upper: f64 },
    #[error("solver: {0}")]
    Solve(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Parse { .. }
            | Error::MissingMatrix(_)
            | Error::MalformedRow { .. }
            | Error::UnsupportedCost { .. }
            | Error::DuplicateBus(_) => ErrorCategory::Parse,
            Error::InvalidNetwork(_) | Error::InvalidBranch { .. } | Error::InvalidParameter(_) => {
                ErrorCategory::Model
            }
            Error::NonFiniteInput(_) => ErrorCategory::Kernel,
            Error::Assembly(_) | Error::EmptyInterior { .. } => ErrorCategory::Assembly,
            Error::Singular(_) | Error::NonFinite { .. } | Error::Solve(_) => ErrorCategory::Solve,
            Error::Dimension(_) => ErrorCategory::Audit,
        }
    }
}
