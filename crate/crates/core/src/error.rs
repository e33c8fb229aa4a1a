use std::path::PathBuf;

/// Errors produced by the perspective engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("value must be positive, got {0}")]
    NonPositive(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("text is empty")]
    EmptyText,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("embedding provider returned a malformed response: {0}")]
    ProviderMalformed(String),

    #[error("embedding provider mismatch: index built with `{expected}`, query from `{found}`")]
    ProviderMismatch { expected: String, found: String },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("missing {what} for `{id}`")]
    Missing { what: &'static str, id: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("model variant {model} cannot score features built for {features}")]
    VariantMismatch { model: String, features: String },

    #[error("label {0} outside [1, 3]")]
    InvalidLabel(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
