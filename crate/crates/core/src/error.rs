use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("I/O error: {0}")]
    Stream(#[from] io::Error),

    #[error("malformed FASTA input: {0}")]
    Fasta(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("sequence {id}: {message}")]
    Sequence { id: String, message: String },

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("checksum mismatch in {0}")]
    Checksum(&'static str),

    #[error("nonce space exhausted: {0}")]
    NonceSpace(String),

    #[error("nonce reuse detected for key {key} nonce {nonce}")]
    NonceReuse { key: String, nonce: u64 },

    #[error("missing key for {0}")]
    MissingKey(String),

    #[error("cryptographic failure: {0}")]
    Crypto(String),

    #[error("duplicate identifier: {0}")]
    Duplicate(String),

    #[error("unknown identifier: {0}")]
    Unknown(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("stale input: {0}")]
    Stale(String),

    #[error("catalog error: {0}")]
    Catalog(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::Corrupt(msg.into())
    }
}
