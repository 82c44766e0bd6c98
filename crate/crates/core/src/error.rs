use thiserror::Error;

/// A single failed config check, keyed by the dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<Violation>),

    #[error("index {index} out of range for {n} processes")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("malformed dataset at line {line}: {reason}")]
    MalformedDataset { line: usize, reason: String },

    #[error("joint posterior collapsed to zero mass")]
    DegeneratePosterior,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("episode aborted at step {step}: {reason}")]
    EpisodeAborted { step: usize, reason: String },

    #[error("unsupported checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::IndexOutOfRange { .. }
                | Error::ShapeMismatch { .. }
                | Error::EmptyDataset
                | Error::MalformedDataset { .. }
                | Error::Checkpoint(_)
                | Error::Invalid(_)
        )
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
