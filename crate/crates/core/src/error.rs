use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("WAV error: {0}")]
    Wav(String),

    #[error("RTTM parse error at line {line}: {message}")]
    Rttm { line: usize, message: String },

    #[error(transparent)]
    Weights(#[from] WeightError),

    #[error("reference contains no scored speech")]
    EmptyReference,

    #[error("session already finalized")]
    SessionFinalized,
}

/// Failure classes of the weight-bundle container.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightError {
    #[error("bad magic: not a weight bundle")]
    BadMagic,

    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(u32),

    #[error("checksum mismatch (file truncated or corrupted)")]
    Checksum,

    #[error("malformed bundle: {0}")]
    Malformed(String),

    #[error("duplicate tensor `{0}`")]
    Duplicate(String),

    #[error("bundle incomplete: missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
