use thiserror::Error;

/// Errors produced anywhere in the unmixing / augmentation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("class {class} member {member}: expected {expected} bands, found {found}")]
    MismatchedBandCount {
        class: usize,
        member: usize,
        expected: usize,
        found: usize,
    },
    #[error("class {class} ({material}) has no signatures")]
    EmptyClass { class: usize, material: String },
    #[error("non-finite value at class {class}, member {member}, band {band}")]
    NonFiniteValue {
        class: usize,
        member: usize,
        band: usize,
    },
    #[error("library needs at least 2 material classes, got {0}")]
    TooFewClasses(usize),
    #[error("duplicate material id {0:?}")]
    DuplicateMaterial(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("endmember matrix is degenerate: active-set solver gave up after {iterations} iterations")]
    DegenerateColumns { iterations: usize },
    #[error("{count} endmember combinations exceed the cap of {cap}")]
    CombinationOverflow { count: u128, cap: u128 },
    #[error("invalid network dimensions: {0}")]
    InvalidDimensions(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("need at least {needed} runs, got {got}")]
    InsufficientRuns { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("bad model file: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes and machine-readable
/// error reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Validation,
    Numerical,
    Config,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Io => "io",
            ErrorCategory::Validation => "validation",
            ErrorCategory::Numerical => "numerical",
            ErrorCategory::Config => "config",
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            Io(_) => ErrorCategory::Io,
            Csv(e) if e.is_io_error() => ErrorCategory::Io,
            MismatchedBandCount { .. }
            | EmptyClass { .. }
            | NonFiniteValue { .. }
            | TooFewClasses(_)
            | DuplicateMaterial(_)
            | DimensionMismatch(_)
            | ModelMismatch(_)
            | ShapeMismatch { .. }
            | Parse { .. }
            | ModelFormat(_)
            | Csv(_)
            | Json(_) => ErrorCategory::Validation,
            DegenerateColumns { .. }
            | CombinationOverflow { .. }
            | NonFiniteLoss { .. }
            | InsufficientRuns { .. } => ErrorCategory::Numerical,
            InvalidDimensions(_) | InvalidConfig(_) => ErrorCategory::Config,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
