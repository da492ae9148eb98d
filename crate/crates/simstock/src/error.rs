use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("calendar violation: {0}")]
    Calendar(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unknown sector id {0}")]
    UnknownSector(u32),

    #[error("unknown ticker {0}")]
    UnknownTicker(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at domain {domain}: {msg}")]
    Diverged { domain: usize, msg: String },

    #[error("infeasible band: radius {r} < |{m} - {n}|")]
    InfeasibleBand { r: usize, m: usize, n: usize },

    #[error("no tradable configuration: every grid cell produced zero signals")]
    NoTradableConfig,

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
