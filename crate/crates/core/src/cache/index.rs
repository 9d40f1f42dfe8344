use std::collections::HashMap;

use crate::cache::entry::CacheEntry;
use crate::cache::key::PrefixKey;
use crate::cache::CacheError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    AlreadyPresent,
}

/// Key → entry map enforcing the insert contract: one output per key,
/// idempotent re-inserts, no non-cacheable entries.
#[derive(Debug, Default, Clone)]
pub struct EntryIndex {
    entries: HashMap<PrefixKey, CacheEntry>,
}

impl EntryIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &PrefixKey) -> Option<&CacheEntry> {
        self.entries.get(key).filter(|e| e.cacheable)
    }

    pub fn contains(&self, key: &PrefixKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.values()
    }

    /// Checks `entry` against the index without modifying it.
    pub fn check(&self, entry: &CacheEntry) -> Result<InsertOutcome, CacheError> {
        validate(entry)?;
        match self.entries.get(&entry.key) {
            None => Ok(InsertOutcome::Inserted),
            Some(existing) if existing.output.same_bytes(&entry.output) => {
                Ok(InsertOutcome::AlreadyPresent)
            }
            Some(existing) => Err(CacheError::DeterminismViolation {
                key: entry.key,
                stored: existing.output.preview(),
                offered: entry.output.preview(),
            }),
        }
    }

    pub fn insert(&mut self, entry: CacheEntry) -> Result<InsertOutcome, CacheError> {
        let outcome = self.check(&entry)?;
        if outcome == InsertOutcome::Inserted {
            self.entries.insert(entry.key, entry);
        }
        Ok(outcome)
    }
}

/// Structural checks every stored entry must pass.
pub fn validate(entry: &CacheEntry) -> Result<(), CacheError> {
    if !entry.cacheable {
        return Err(CacheError::InvalidEntry(
            "entry is marked non-cacheable".into(),
        ));
    }
    if !entry.key_is_consistent() {
        return Err(CacheError::InvalidEntry(format!(
            "key {} is not derived from parent {} and the input",
            entry.key, entry.parent_key
        )));
    }
    if entry.recompute_global_id() != entry.global_id {
        return Err(CacheError::InvalidEntry(format!(
            "global id {} does not match entry content",
            entry.global_id
        )));
    }
    if entry.backend.name.is_empty() {
        return Err(CacheError::InvalidEntry("backend name is empty".into()));
    }
    Ok(())
}
