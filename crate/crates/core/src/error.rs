use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum UqError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("training diverged after {steps} steps ({context})")]
    Diverged { steps: usize, context: String },

    #[error("ensemble member {member} failed: {source}")]
    MemberFailed {
        member: usize,
        #[source]
        source: Box<UqError>,
    },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("no interior mode: Beta({a}, {b}) needs a > 1 and b > 1")]
    BoundaryMode { a: f64, b: f64 },

    #[error("kernel bandwidth collapsed: all kernel values are zero")]
    BandwidthCollapse,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, UqError>;
