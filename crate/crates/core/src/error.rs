use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A non-finite value showed up while evaluating parameter `index`.
    #[error("non-finite value at parameter {index}: {detail}")]
    Numeric { index: usize, detail: String },

    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: usize, detail: String },

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no finite multiplier bracket: {0}")]
    Bracket(String),

    #[error("convexity violation: {0}")]
    ConvexityViolation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("class {class} has no samples; centroid undefined")]
    UndefinedCentroid { class: usize },

    #[error("iteration {k}: {source}")]
    Iteration {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numeric,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Shape(_)
            | Error::EmptyInput(_)
            | Error::Precondition(_)
            | Error::Config(_)
            | Error::UndefinedCentroid { .. } => ErrorClass::Config,
            Error::Numeric { .. }
            | Error::Domain(_)
            | Error::Bracket(_)
            | Error::ConvexityViolation(_) => ErrorClass::Numeric,
            Error::Parse { .. } | Error::Io(_) | Error::Csv(_) => ErrorClass::Io,
            Error::Iteration { source, .. } => source.class(),
        }
    }

    pub(crate) fn at_iteration(self, k: usize) -> Error {
        Error::Iteration {
            k,
            source: Box::new(self),
        }
    }
}
