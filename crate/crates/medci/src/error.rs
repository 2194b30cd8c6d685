use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("cannot compose a pure-DP budget with a zCDP budget")]
    MixedBudgetKinds,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no valid target rank: {0}")]
    NoValidTarget(String),
    #[error("grid point {0} is not aligned to the tree leaves")]
    UnalignedGrid(f64),
    #[error("non-private interval has zero width")]
    DegenerateBaseline,
}

/// Coarse error class, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Mechanism,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidBudget(_)
            | Error::MixedBudgetKinds
            | Error::InvalidParameter(_)
            | Error::UnalignedGrid(_) => ErrorClass::Config,
            Error::InsufficientData(_) | Error::DegenerateBaseline => ErrorClass::Data,
            Error::NoValidTarget(_) => ErrorClass::Mechanism,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
