use thiserror::Error;

use crate::model::Arm;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments or configuration supplied by the caller.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A guarded read that the data model forbids, e.g. an unobserved outcome.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// The data cannot support the requested fit (one-class labels, empty slices).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error(
        "empty-arm fold: training data for fold {fold} has no labeled rows in arm {arm}; \
         try fewer folds"
    )]
    EmptyArmFold { fold: usize, arm: Arm },

    /// An input file that does not follow the expected layout.
    #[error("input schema violation: {0}")]
    Schema(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) => 2,
            Error::ContractViolation(_)
            | Error::Degenerate(_)
            | Error::EmptyArmFold { .. }
            | Error::Schema(_)
            | Error::Io(_)
            | Error::Csv(_) => 3,
            Error::Numerical(_) => 4,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
}
