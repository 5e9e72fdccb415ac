use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("variable `{variable}` ranges over empty domain `{domain}`")]
    EmptyDomain { variable: String, domain: String },

    #[error("grounding would produce {count} ground formulas (limit {limit})")]
    TooManyGroundings { count: u128, limit: u64 },

    #[error("{free} free atoms exceed the enumeration cap of {cap}")]
    CapExceeded { free: usize, cap: usize },

    #[error("query has no free atoms")]
    NoFreeAtoms,

    #[error("weight {index} is not finite ({value})")]
    NonFiniteWeight { index: usize, value: f64 },

    #[error("optimizer diverged: {0}")]
    Divergence(String),

    #[error("affordance `{requested}` unavailable; alternatives: {}", .available.join(", "))]
    AffordanceUnavailable {
        requested: String,
        available: Vec<String>,
    },

    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("AUC needs both classes (positives {positives}, negatives {negatives})")]
    SingleClass { positives: usize, negatives: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }

    /// True for errors caused by the numeric behaviour of a computation
    /// rather than by malformed input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence(_) | Error::NonFiniteWeight { .. })
    }
}
