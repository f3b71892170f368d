use thiserror::Error;

/// Errors raised by accounting, training and the CLI.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("budget unachievable: delta {delta} at epsilon {epsilon} lies outside the profile over mu in [{mu_lo:e}, {mu_hi}]")]
    BudgetUnachievable { epsilon: f64, delta: f64, mu_lo: f64, mu_hi: f64 },

    #[error("budget too small: mu_total = {0} leaves no room for any noise calibration")]
    BudgetTooSmall(f64),

    #[error("overflow: exp(mu^2) is not representable for mu = {0}")]
    CompositionOverflow(f64),

    #[error("budget exhausted: all {steps} steps of the schedule have been spent")]
    BudgetExhausted { steps: u64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty micro-batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code for the CLI.
    ///
    /// `2` configuration or argument errors, `3` calibration failures,
    /// `4` budget exhaustion, `5` runtime failures (non-finite values, I/O).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::DimensionMismatch { .. }
            | Error::EmptyDataset => 2,
            Error::BudgetUnachievable { .. }
            | Error::BudgetTooSmall(_)
            | Error::CompositionOverflow(_) => 3,
            Error::BudgetExhausted { .. } => 4,
            Error::EmptyBatch | Error::NonFinite(_) | Error::Io(_) => 5,
        }
    }
}

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

pub type Result<T> = std::result::Result<T, Error>;
