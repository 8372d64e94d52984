use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid of {ngrid} points cannot represent {nmodes} modes without aliasing")]
    Aliasing { nmodes: usize, ngrid: usize },

    #[error("invalid spectral state: {0}")]
    InvalidState(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A coefficient left the finite range or exceeded the blow-up bound.
    #[error("numerical blow-up at step {step} (max |u_k| = {max_abs:e})")]
    BlowUp { step: usize, max_abs: f64 },

    #[error("false rates undefined: truth mask is empty")]
    EmptyTruth,

    #[error("closure history holds {have} of {need} required lags")]
    ColdHistory { have: usize, need: usize },

    #[error("normal matrix for mode {mode} is identically zero")]
    DegenerateSystem { mode: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::BlowUp { .. } => 3,
            Error::Io(_) | Error::Format(_) | Error::Json(_) => 4,
            _ => 1,
        }
    }
}
