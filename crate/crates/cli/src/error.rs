use edgesplit_core::arch::Violation;
use serde::Serialize;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing artifact {0}; run the upstream command first")]
    MissingArtifact(String),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] edgesplit_core::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingArtifact(_) => "MissingArtifact",
            CliError::Config(_) => "ConfigError",
            CliError::Core(e) => e.kind(),
        }
    }

    /// One-line JSON object written to stderr on failure.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: &'a str,
            message: String,
            #[serde(skip_serializing_if = "Vec::is_empty")]
            violations: Vec<Violation>,
        }
        let violations = match self {
            CliError::Core(edgesplit_core::Error::InfeasiblePolicy(report)) => {
                report.violations.clone()
            }
            _ => Vec::new(),
        };
        let record = Record {
            error: self.kind(),
            message: self.to_string(),
            violations,
        };
        serde_json::to_string(&record).expect("error record serializes")
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}
