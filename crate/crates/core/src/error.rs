use std::path::PathBuf;

use thiserror::Error;

use crate::audio::StemType;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty signal")]
    EmptySignal,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("signal too short: {what} needs at least {min_seconds:.3} s, got {got_seconds:.3} s")]
    TooShort {
        what: &'static str,
        min_seconds: f64,
        got_seconds: f64,
    },

    #[error("unsupported audio format in {path}: {detail} (supported: PCM 16/24/32-bit integer, 32-bit float WAV)")]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("sample-rate mismatch: expected {expected} Hz, got {got} Hz")]
    SampleRateMismatch { expected: u32, got: u32 },

    #[error("no measurable stems for type {0}")]
    NoMeasurableStems(StemType),

    #[error("stem too quiet to normalize (required gain {gain_db:.1} dB exceeds +{limit_db:.0} dB)")]
    TooQuietToNormalize { gain_db: f64, limit_db: f64 },

    #[error("non-finite EQ difference curve (corrupt target spectrum?)")]
    NonFiniteEqCurve,

    #[error("IR too short for RT estimation")]
    IrTooShort,

    #[error("impulse-response pool with RT60 in [{min_s}, {max_s}] s is empty")]
    EmptyIrPool { min_s: f64, max_s: f64 },

    #[error("silent reference")]
    SilentReference,

    #[error("no profile for stem type {0}")]
    MissingProfile(StemType),

    #[error("profile error: {0}")]
    Profile(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input or data, as opposed to internal failures.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Json(_))
    }
}
