//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification of an [`Error`], used by the experiment driver to
/// pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Invalid or inconsistent configuration.
    Config,
    /// Malformed, missing or inconsistent input data.
    Data,
    /// Non-finite values or divergence during computation.
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),

    #[error("sample rate mismatch: file has {found} Hz, expected {expected} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("word-vector file line {line}: expected {expected} values, found {found}")]
    VectorDimension {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate word `{word}` on line {line}")]
    DuplicateWord { word: String, line: usize },

    #[error("label `{0}` has no in-vocabulary tokens")]
    UnembeddableLabel(String),

    #[error("exclusion entry `{0}` matches no class")]
    UnmatchedExclusion(String),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("class `{0}` has no clips in the training split")]
    EmptyClass(String),

    #[error("checkpoint kind mismatch: expected `{expected}`, found `{found}`")]
    KindMismatch { expected: String, found: String },

    #[error("unsupported checkpoint version {0}")]
    Version(u32),

    #[error("{0}")]
    Data(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub fn shape(detail: impl Into<String>) -> Self {
        Error::Shape(detail.into())
    }

    pub fn dim(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            found,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::KindMismatch { .. } | Error::Dimension { .. } => {
                ErrorKind::Config
            }
            Error::NonFinite(_) | Error::Diverged { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
