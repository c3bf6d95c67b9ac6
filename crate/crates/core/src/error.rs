use thiserror::Error;

/// Errors raised across the library. Variants carry enough context to be
/// reported verbatim by the command line front end.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("{op} requires {needed} (p = {p}, N = {dim})")]
    Regime {
        op: &'static str,
        needed: &'static str,
        p: f64,
        dim: u32,
    },

    #[error("entropy undefined: gamma = 0 at p = 3/2")]
    EntropyUndefined,

    #[error("non-integrable tail: measured decay power {power:.4}, integrability needs more than {threshold:.4}")]
    NonIntegrableTail { power: f64, threshold: f64 },

    #[error("root bracketing failed: {0}")]
    Bracket(String),

    #[error("newton iteration failed at time {time}: scaled residual {residual:e}")]
    Newton { time: f64, residual: f64 },

    #[error("negative values beyond tolerance at time {time} (min {min:e})")]
    Negativity { time: f64, min: f64 },

    #[error("frame mismatch: {0}")]
    Frame(String),

    #[error("eigen-solver failure: {0}")]
    Eigen(String),

    #[error("fit failure: {0}")]
    Fit(String),

    #[error("{0}")]
    Domain(String),

    #[error("io: {0}")]
    Io(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
