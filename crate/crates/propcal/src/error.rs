use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("design has no usable non-intercept columns")]
    EmptyDesign,

    #[error("unknown column '{0}'")]
    UnknownColumn(String),

    #[error("duplicate design term '{0}'")]
    DuplicateTerm(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("treatment is degenerate: both arms must be present")]
    DegenerateTreatment,

    #[error("no lambda in the grid produced a finite cross-validation value")]
    NoViableLambda,

    #[error("degenerate inverse-probability weights: {0}")]
    DegenerateWeights(String),

    #[error("column '{0}' has zero variance")]
    ZeroVariance(String),

    #[error("arm too small: {0}")]
    ArmTooSmall(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
