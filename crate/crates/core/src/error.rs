//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or combination of parameters fails validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The flat key/value config file could not be parsed.
    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    /// Two sampled series do not share the same time grid.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A requested group delay does not fit on the trace.
    #[error("group delay {delay_s:.3e} s exceeds trace span {span_s:.3e} s")]
    DelayExceedsTrace { delay_s: f64, span_s: f64 },

    /// Moment estimation was asked for on series with no common valid samples.
    #[error("empty overlap between series")]
    EmptyOverlap,

    /// A guard that protects estimator quality was violated.
    #[error("statistics guard violated: {0}")]
    StatisticsGuard(String),

    /// Mean click probability per sample too high for the detection model.
    #[error("rate guard violated: {0}")]
    RateGuard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems,
    /// 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::ConfigParse { .. }
            | Error::RateGuard(_)
            | Error::StatisticsGuard(_) => 2,
            _ => 3,
        }
    }
}
