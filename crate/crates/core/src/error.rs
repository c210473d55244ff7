use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid mask: {0}")]
    Mask(String),

    #[error("covariance matrix for model `{model}` is not positive definite (jitter reached {jitter:e})")]
    NotPositiveDefinite { model: String, jitter: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training diverged at iteration {iteration}: total loss is {value}")]
    Divergence { iteration: usize, value: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable category, printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Shape(_) => "shape",
            Error::Mask(_) => "mask",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::Numerical(_) => "numerical",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Divergence { .. } => "divergence",
            Error::Contract(_) => "contract",
            Error::SizeLimit(_) => "size_limit",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
