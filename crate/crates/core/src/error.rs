//! Crate-wide error type.
//!
//! Variants group into the error classes surfaced by the CLI exit codes:
//! missing/unreadable inputs, infeasible plans, and invariant violations
//! (which includes schema and shape validation failures).

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file could not be read or written.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A file exists but does not parse against its schema.
    #[error("parse error: {0}")]
    Parse(String),

    /// Vector lengths or record shapes are inconsistent.
    #[error("shape error: {0}")]
    Shape(String),

    /// A record lacks the output of a model in the family.
    #[error("missing model output: {0}")]
    MissingModel(String),

    /// A declared invariant does not hold on the input.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// An optimization or sizing problem has no feasible solution.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An operation received an empty input it cannot work with.
    #[error("empty input: {0}")]
    EmptyInput(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl Error {
    /// Process exit code for the CLI: 2 missing inputs, 3 infeasible,
    /// 4 invariant/validation violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            Error::Infeasible(_) => 3,
            _ => 4,
        }
    }
}
