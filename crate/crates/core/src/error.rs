use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Extents of one or more operands do not line up.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Internal bookkeeping (switch indices, tape layout) is inconsistent.
    #[error("corrupt {what}: {detail}")]
    Corruption { what: &'static str, detail: String },

    /// Numeric input outside its domain, e.g. a negative variance.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Load(#[from] LoadError),

    #[error("build error: {0}")]
    Build(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("unit out of range: {0}")]
    UnitOutOfRange(String),

    #[error("tape was not recorded from this graph: {0}")]
    TapeMismatch(String),

    #[error("layer `{0}` has a global receptive field")]
    GlobalReceptiveField(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("empty corpus: no image could be processed")]
    EmptyCorpus,

    #[error("mine file error at line {line}: {detail}")]
    MineFormat { line: usize, detail: String },

    #[error("unknown stage `{0}`")]
    UnknownStage(String),

    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
}

/// Failures while decoding an RNW1 weight container.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum LoadError {
    #[error("bad magic bytes (expected RNW1)")]
    BadMagic,
    #[error("truncated payload while reading {0}")]
    Truncated(String),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("non-finite value in tensor `{0}`")]
    NonFinite(String),
    #[error("tensor name is not valid UTF-8")]
    InvalidName,
    #[error("tensor `{name}` has unsupported rank {rank}")]
    BadRank { name: String, rank: u8 },
    #[error("tensor `{0}` has a zero extent")]
    ZeroExtent(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), err: source }
    }
}
