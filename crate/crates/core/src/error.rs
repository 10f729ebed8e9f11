use thiserror::Error;

/// Errors raised by the quantizers, codec, accountant and simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dither {0:?} lies outside the basic cell")]
    InvalidDither(Vec<f64>),

    #[error("rejection loop exceeded {cap} iterations")]
    RejectionOverflow { cap: u64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("message box has {0} points, more than 2^63")]
    DomainTooLarge(u128),

    #[error("lattice message {coords:?} outside index box [{lo:?}, {hi:?}]")]
    MessageOutOfDomain {
        coords: Vec<i64>,
        lo: Vec<i64>,
        hi: Vec<i64>,
    },

    #[error("malformed bitstream: {0}")]
    Bitstream(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("unsupported parameter: {0}")]
    Unsupported(String),

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("SNR undefined: zero signal power")]
    UndefinedSnr,

    #[error("encoder/decoder lockstep violated: {0}")]
    Lockstep(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
