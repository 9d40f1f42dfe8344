//! Durable storage: a directory with a header file and an append-only,
//! checksummed record log, plus single-file archives for sharing stores.

pub mod archive;
pub mod codec;
pub mod store;
pub mod verify;

use std::path::PathBuf;

pub use codec::{StoreHeader, FORMAT_VERSION, MAGIC};
pub use store::{AccessMode, CacheStore, StoreStats};
pub use verify::{verify_dir, CorruptRecord, OrphanParent, VerifyReport};

use crate::cache::CacheError;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("a store already exists at {0}")]
    AlreadyExists(PathBuf),
    #[error("no store at {0}")]
    NotFound(PathBuf),
    #[error("store format mismatch: magic {magic:?}, format_version {format_version:?} (expected {MAGIC:?} version {FORMAT_VERSION})")]
    FormatMismatch {
        magic: String,
        format_version: Option<u64>,
    },
    #[error("store header is malformed: {0}")]
    CorruptHeader(String),
    #[error("corrupt record #{ordinal}: {reason}")]
    Corrupt { ordinal: usize, reason: String },
    #[error("store at {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("store is open read-only")]
    ReadOnly,
    #[error("store is closed")]
    Closed,
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
