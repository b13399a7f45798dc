use facegate::audit::{AuditError, LoadError};
use facegate::classifier::ClassifierError;
use facegate::evaluation::synthetic::SynthError;
use facegate::evaluation::EvalError;
use facegate::features::FeatureError;
use facegate::imaging::ImagingError;
use facegate::providers::ProviderError;
use facegate::records::RecordError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        json!({ "error": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() }).to_string()
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::Divergence { .. } => CliError::Numeric(e.to_string()),
            ClassifierError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => data(e),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                data(e)
            }
        })*
    };
}

data_errors!(
    AuditError,
    EvalError,
    FeatureError,
    ImagingError,
    LoadError,
    ProviderError,
    RecordError,
    SynthError,
    std::io::Error,
    csv::Error
);
