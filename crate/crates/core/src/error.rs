use std::path::PathBuf;

use thiserror::Error;

use crate::types::SimTime;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event scheduled at {at} us but clock is already at {now} us")]
    ScheduleInPast { at: SimTime, now: SimTime },

    #[error("unknown link `{0}`")]
    UnknownLink(String),

    #[error("packet size must be positive")]
    EmptyPacket,

    #[error("no interface in state Up; node cannot register")]
    NoUpInterface,

    #[error("expected a REGISTER message, got {0}")]
    NotRegister(String),

    #[error("duplicate trace record for stream `{stream}` seq {seq}")]
    DuplicateRecord { stream: String, seq: u64 },

    #[error("burst ratio must be positive (got {0})")]
    NonPositiveBurstRatio(f64),

    #[error("window grids differ between runs: {0}")]
    WindowGridMismatch(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("config error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    ConfigInvalid(Vec<String>),

    #[error("malformed trace at line {line}: {message}")]
    TraceFormat { line: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
