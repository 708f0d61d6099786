use std::path::PathBuf;

/// Errors produced anywhere in the identification pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed WAV: {0}")]
    MalformedWav(String),

    #[error("unsupported WAV encoding in chunk '{chunk}': {detail}")]
    UnsupportedWav { chunk: String, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("too few frames: need at least {needed}, got {got}")]
    TooFewFrames { needed: usize, got: usize },

    #[error("feature fingerprint mismatch: model {model:016x}, features {features:016x}")]
    FingerprintMismatch { model: u64, features: u64 },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("archive: {0}")]
    Archive(String),

    #[error("{speaker_id} utterance {utterance_index}: {source}")]
    Utterance {
        speaker_id: String,
        utterance_index: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) => ErrorKind::Usage,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Utterance { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
