use std::path::PathBuf;

/// Coarse failure family, used by the CLI to pick an exit code and by
/// machine-readable error output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// File system and parsing problems: the input could not be read at all.
    Io,
    /// The input was read but its contents violate a shape or value contract.
    Data,
    /// An algorithm broke down numerically on otherwise well-formed input.
    Numeric,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing file: {path}")]
    MissingFile { path: PathBuf },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("shape mismatch in {path}: header declares {expected} values, payload holds {actual}")]
    ShapeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at flat index {index} in {context}")]
    NonFiniteValue { index: usize, context: String },
    #[error("inconsistent dimensions: {context}")]
    InconsistentDimensions { context: String },
    #[error("stored prediction contradicts logits at row {row}: stored {stored}, argmax {argmax}")]
    PredictionMismatch { row: usize, stored: i64, argmax: i64 },
    #[error("label {label} at row {row} is invalid: {context}")]
    InvalidLabel { row: usize, label: i64, context: String },
    #[error("logits disagree with head at row {row}, column {col}: |diff| = {diff}")]
    HeadInconsistent { row: usize, col: usize, diff: f64 },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty score vector")]
    EmptyScores,
    #[error("too few samples: have {n}, need at least {min}")]
    TooFewSamples { n: usize, min: usize },
    #[error("class {class} has {count} samples, need at least 2")]
    DegenerateClass { class: usize, count: usize },
    #[error("open-world pool too small: need {needed} samples, have {available}")]
    InsufficientOpenPool { needed: usize, available: usize },
    #[error("invalid fraction {fraction}: must lie in [0, 1)")]
    InvalidFraction { fraction: f64 },
    #[error("bundle has no open-world split")]
    MissingOpenWorldSplit,
    #[error("invalid config: {reason}")]
    InvalidConfig { reason: String },
    #[error("covariance not positive definite after regularization")]
    SingularCovariance,
    #[error("numeric failure: {reason}")]
    NumericFailure { reason: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::MissingFile { .. } | Error::Io { .. } | Error::MalformedHeader { .. } => {
                ErrorKind::Io
            }
            Error::ShapeMismatch { .. }
            | Error::NonFiniteValue { .. }
            | Error::InconsistentDimensions { .. }
            | Error::PredictionMismatch { .. }
            | Error::InvalidLabel { .. }
            | Error::HeadInconsistent { .. }
            | Error::DimensionMismatch { .. }
            | Error::LengthMismatch { .. }
            | Error::EmptyScores
            | Error::TooFewSamples { .. }
            | Error::DegenerateClass { .. }
            | Error::InsufficientOpenPool { .. }
            | Error::InvalidFraction { .. }
            | Error::MissingOpenWorldSplit
            | Error::InvalidConfig { .. } => ErrorKind::Data,
            Error::SingularCovariance | Error::NumericFailure { .. } => ErrorKind::Numeric,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::MissingFile { .. } => "MissingFile",
            Error::Io { .. } => "Io",
            Error::MalformedHeader { .. } => "MalformedHeader",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::InconsistentDimensions { .. } => "InconsistentDimensions",
            Error::PredictionMismatch { .. } => "PredictionMismatch",
            Error::InvalidLabel { .. } => "InvalidLabel",
            Error::HeadInconsistent { .. } => "HeadInconsistent",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::EmptyScores => "EmptyScores",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::DegenerateClass { .. } => "DegenerateClass",
            Error::InsufficientOpenPool { .. } => "InsufficientOpenPool",
            Error::InvalidFraction { .. } => "InvalidFraction",
            Error::MissingOpenWorldSplit => "MissingOpenWorldSplit",
            Error::InvalidConfig { .. } => "InvalidConfig",
            Error::SingularCovariance => "SingularCovariance",
            Error::NumericFailure { .. } => "NumericFailure",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
