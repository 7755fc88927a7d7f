use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {source}")]
    Pgm {
        path: PathBuf,
        #[source]
        source: PgmError,
    },

    #[error("{path}: {source}")]
    ModelFile {
        path: PathBuf,
        #[source]
        source: ModelFileError,
    },

    #[error("frame {index}: {reason}")]
    Frame { index: usize, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Binary PGM decoding failures.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PgmError {
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("wrong dimensions: expected {expected_w}x{expected_h}, found {found_w}x{found_h}")]
    WrongDimensions {
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("truncated payload: expected {expected} pixel bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected bytes after the pixel payload")]
    TrailingData(usize),
}

/// Model file decoding failures.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelFileError {
    #[error("bad magic {0:?}, expected \"STW1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown layer kind tag {tag} at layer {layer}")]
    BadKindTag { layer: usize, tag: u8 },
    #[error("shape chain violation at layer {layer}: {detail}")]
    ShapeChain { layer: usize, detail: String },
    #[error("truncated file while reading {context}")]
    Truncated { context: String },
    #[error("file length {actual} does not match the {expected} bytes declared by its header")]
    LengthMismatch { expected: usize, actual: usize },
}
