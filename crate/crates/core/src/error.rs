use thiserror::Error;

use crate::env::Point;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("buffer is empty")]
    EmptyBuffer,

    #[error("episode exhausted: step {step} reached horizon {horizon}")]
    EpisodeExhausted { step: usize, horizon: usize },

    #[error("enumeration of {count} trajectories exceeds the guard of {limit}")]
    EnumerationTooLarge { count: u128, limit: u128 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("no library pattern matches goal transition ({}, {})", .delta.x, .delta.y)]
    UnmatchedPattern { delta: Point },

    #[error("cluster {0} has zero probability mass")]
    ZeroMassCluster(usize),

    #[error("maze format error on line {line}: {message}")]
    MazeFormat { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
