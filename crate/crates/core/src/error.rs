use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("zero total loop resistance")]
    ZeroResistance,

    #[error("time step {dt:e} s is not below the capacitor time constant {tau:e} s")]
    Unstable { dt: f64, tau: f64 },

    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("empty input")]
    EmptyInput,

    #[error("key exhausted: {len} bits cannot be halved {steps} times")]
    KeyExhausted { len: usize, steps: u32 },

    #[error("non-finite value: {0}")]
    NonFinite(f64),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
