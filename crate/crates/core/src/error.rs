use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix of dimension {dim} is not positive definite{}", offending(.columns))]
    SingularCovariance { dim: usize, columns: Vec<String> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid dataset: {0}")]
    Validation(String),

    #[error("model is not identifiable: {0}")]
    Identifiability(String),

    #[error("need at least {needed} posterior draws, got {got}")]
    InsufficientDraws { needed: usize, got: usize },

    #[error("diagnostic unavailable: {0}")]
    DiagnosticUnavailable(String),

    #[error("{path}: row {row}, column {column:?}: cannot parse {value:?}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("subject identifiers do not align across files: {0:?}")]
    Alignment(Vec<String>),

    #[error("incompatible draws format version {found} (expected {expected})")]
    IncompatibleVersion { found: u32, expected: u32 },

    #[error("corrupt draws file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn offending(columns: &[String]) -> String {
    if columns.is_empty() {
        String::new()
    } else {
        format!(" (dependent columns: {})", columns.join(", "))
    }
}
