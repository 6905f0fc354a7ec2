//! Error types shared across the crate.

use thiserror::Error;

/// Why a database or index cache file was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorruptKind {
    /// Leading magic bytes did not match.
    BadMagic,
    /// File declares a format version this build does not understand.
    Version { found: u32, supported: u32 },
    /// File ended before the declared structure was complete.
    Truncated,
    /// CRC32 over the payload did not match the stored checksum.
    Checksum,
    /// Structurally impossible field contents (bad UTF-8, out-of-range ids, ...).
    Encoding(String),
}

impl std::fmt::Display for CorruptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorruptKind::BadMagic => write!(f, "bad magic bytes"),
            CorruptKind::Version { found, supported } => {
                write!(f, "unsupported version {found} (supported: {supported})")
            }
            CorruptKind::Truncated => write!(f, "truncated file"),
            CorruptKind::Checksum => write!(f, "checksum mismatch"),
            CorruptKind::Encoding(msg) => write!(f, "invalid encoding: {msg}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid class name: {0}")]
    InvalidName(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("degenerate mask: weight sum is zero")]
    DegenerateMask,

    #[error("degenerate embedding: zero norm")]
    DegenerateEmbedding,

    #[error("unknown class id {0}")]
    UnknownClass(u32),

    #[error("corrupt database: {0}")]
    CorruptDatabase(CorruptKind),

    #[error("corrupt index cache: {0}")]
    CorruptIndexCache(CorruptKind),

    #[error("invalid comparison: {0}")]
    InvalidComparison(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("database contains no records")]
    NoRecords,

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("element {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Tag an error with the index of the element that produced it.
    pub fn at(index: usize, source: Error) -> Self {
        Error::AtIndex {
            index,
            source: Box::new(source),
        }
    }

    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
