use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive-definite: {0}")]
    NotPositiveDefinite(String),

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("insufficient chains for quantile p={p} at level alpha={alpha}: order statistic {index} outside 1..={n}")]
    InsufficientChains {
        p: f64,
        alpha: f64,
        index: usize,
        n: usize,
    },

    #[error("initialization failed: {bad} of {total} chains started at non-finite log density")]
    Initialization { bad: usize, total: usize },

    #[error("{module}: {message}")]
    Runtime { module: &'static str, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
