use thiserror::Error;

use crate::arch::ConstraintReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("policy has {policy} sub-models but the fleet has {fleet} devices")]
    MismatchedFleet { policy: usize, fleet: usize },

    #[error("no feasible decomposition for this fleet: {0}")]
    InfeasibleFleet(String),

    #[error("policy violates {} constraint(s)", .0.violations.len())]
    InfeasiblePolicy(ConstraintReport),

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("gaussian process has no observations")]
    EmptyState,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    #[error("unsupported format tag `{found}` (expected `{expected}`)")]
    FormatVersion { found: String, expected: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "ConfigError",
            Error::MismatchedFleet { .. } => "MismatchedFleet",
            Error::InfeasibleFleet(_) => "InfeasibleFleet",
            Error::InfeasiblePolicy(_) => "InfeasiblePolicy",
            Error::DegenerateData(_) => "DegenerateData",
            Error::NumericalFailure(_) => "NumericalFailure",
            Error::EmptyState => "EmptyState",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::EmptyEnsemble => "EmptyEnsemble",
            Error::InvalidWorkload(_) => "InvalidWorkload",
            Error::FormatVersion { .. } => "FormatVersion",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
            Error::Toml(_) => "ConfigError",
        }
    }
}
