use thiserror::Error;

/// Crate-wide error type.
///
/// The variants map onto the failure classes surfaced by the CLI:
/// argument/format problems, shape mismatches, predictor inconsistency and
/// zero-margin samples each carry a distinct exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("degenerate boundary: {0}")]
    DegenerateBoundary(String),

    #[error("cannot refine: {0}")]
    CannotRefine(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("predictor inconsistent: {0}")]
    Consistency(String),

    #[error("cannot certify, sample {sample} has zero activation margin")]
    ZeroMargin { sample: usize },

    #[error("build configuration error: {0}")]
    Config(String),

    #[error("unsupported construction: {0}")]
    Unsupported(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("refusing enumeration, estimated {estimate} partitions exceeds limit {limit}")]
    TooManyPartitions { estimate: u128, limit: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
