use thiserror::Error;

use crate::rng::Orientation;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SandpileError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("layout error: site {site} has no {orientation:?} stream")]
    Layout { site: i64, orientation: Orientation },
    #[error("site {0} is outside the working interval")]
    OutOfRange(i64),
    #[error("illegal move at site {site}: {reason}")]
    IllegalMove { site: i64, reason: &'static str },
    #[error("toppling cap of {cap} reached")]
    CapReached { cap: u64 },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, SandpileError>;
