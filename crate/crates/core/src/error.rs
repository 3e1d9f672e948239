use thiserror::Error;

/// Errors surfaced by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a documented invariant. The message names the failing
    /// invariant and, where possible, its index path.
    #[error("validation error: {0}")]
    Validation(String),

    /// A caller broke an operation's precondition (wrong call order,
    /// inconsistent counters).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A hard invariant check over a run or trace failed.
    #[error("invariant failure: {0}")]
    Invariant(String),

    /// A binary or JSON artifact could not be decoded.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }

    /// Process exit code for the CLI: 2 validation, 3 invariant failure,
    /// 4 I/O or decoding.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Contract(_) => 2,
            Error::Invariant(_) => 3,
            Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Contract(_) => "contract",
            Error::Invariant(_) => "invariant",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
