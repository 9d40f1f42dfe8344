//! Prefix-keyed cache semantics.
//!
//! An interaction at step `k` of a session is identified by the hash chain
//! over every input sent in that session so far. Two sessions share an entry
//! exactly when their input histories agree up to and including that step.

pub mod entry;
pub mod index;
pub mod key;
pub mod rules;
pub mod session;
pub mod time;

pub use entry::{CacheEntry, GlobalId};
pub use index::{EntryIndex, InsertOutcome};
pub use key::{derive_key, key_chain, session_root, Digest32, InputAtom, OutputRecord, PrefixKey};
pub use rules::{classify, parse_rules, CacheabilityRule, Pattern, Verdict};
pub use session::SessionContext;
pub use time::{Clock, FixedClock, SystemClock, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CacheError {
    /// The key is already stored with different output bytes: the backend is
    /// nondeterministic or has changed.
    #[error("determinism violation at key {key}: stored {stored:?}, offered {offered:?}")]
    DeterminismViolation {
        key: PrefixKey,
        stored: String,
        offered: String,
    },
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
}
