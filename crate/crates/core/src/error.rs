use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the valuation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("non-numeric value `{value}` in column `{column}` (row {row})")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("unparseable timestamp `{value}` (row {row})")]
    BadTimestamp { row: usize, value: String },
    #[error("no usable rows remain after applying the missing-value policy")]
    NoRows,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("task mismatch: {0}")]
    TaskMismatch(String),
    #[error("infeasible subset pool: {0}")]
    InfeasiblePool(String),
    #[error("too many players for exact enumeration: {players} > {max}")]
    TooManyPlayers { players: usize, max: usize },
    #[error("work budget exceeded: {required} > {budget}")]
    BudgetExceeded { required: u64, budget: u64 },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
