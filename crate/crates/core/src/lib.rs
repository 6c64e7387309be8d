//! Encrypted referential self-index over collections of genomic sequences.

pub mod coding;
pub mod crypto;
pub mod ebtree;
pub mod erdb;
pub mod erindex;
pub mod error;
pub mod fm;
pub mod rlz;
pub mod sequence;
pub mod storage;

pub use error::{Error, Result};

pub use crypto::{KeyPortfolio, SymmetricKey, UserPrivateKey, UserPublicKey};
pub use erdb::ErDb;
pub use erindex::{BuildConfig, ERIndex, IndexStats, Occurrence, OpenedIndex, SearchOptions};
pub use fm::ReferenceIndex;
pub use sequence::Sequence;
