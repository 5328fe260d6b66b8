use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A caller broke an operation's preconditions (dimension, sign, range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration detected before any simulation starts.
    #[error("configuration error: {0}")]
    Config(String),

    /// A protocol received a message its invariants say cannot occur.
    #[error("protocol violation at process {process}: {detail}")]
    Protocol { process: usize, detail: String },

    #[error("divergence at process {process}, iteration {iteration}: non-finite value in update")]
    Divergence { process: usize, iteration: u64 },

    #[error("construction error: {0}")]
    Construction(String),

    #[error("bound estimation failed: {0}")]
    EstimationFailed(String),

    #[error("table error: {0}")]
    Table(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
