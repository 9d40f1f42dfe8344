use serde::{Deserialize, Serialize};

use crate::cache::key::{derive_key, Digest32, InputAtom, OutputRecord, PrefixKey};
use crate::cache::time::Timestamp;
use crate::canon::CanonicalHasher;
use crate::descriptor::BackendDescriptor;

/// Content-derived name of a cached interaction.
///
/// Covers the key chain, the exchanged bytes and the backend identity, but
/// not when the entry was made or how long the call took, so the same
/// interaction recorded twice gets the same identifier on any machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GlobalId(pub Digest32);

impl GlobalId {
    pub fn compute(
        key: &PrefixKey,
        parent_key: &PrefixKey,
        input: &InputAtom,
        output: &OutputRecord,
        backend: &BackendDescriptor,
    ) -> Self {
        let mut h = CanonicalHasher::new();
        h.field(key.as_bytes())
            .field(parent_key.as_bytes())
            .field(input.as_bytes())
            .field(&output.bytes)
            .field(backend.name.as_bytes())
            .field(backend.version.as_bytes())
            .field(backend.config_fingerprint.as_bytes());
        Self(h.finish())
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

impl std::fmt::Display for GlobalId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Display::fmt(&self.0, f)
    }
}

/// One input/output interaction plus the metadata needed to find, cite and
/// re-check it later.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub key: PrefixKey,
    pub parent_key: PrefixKey,
    pub input: InputAtom,
    pub output: OutputRecord,
    pub created_at: Timestamp,
    pub backend: BackendDescriptor,
    pub global_id: GlobalId,
    pub cacheable: bool,
}

impl CacheEntry {
    /// Builds a consistent entry: `key` and `global_id` are derived here.
    pub fn new(
        parent_key: PrefixKey,
        input: InputAtom,
        output: OutputRecord,
        backend: BackendDescriptor,
        created_at: Timestamp,
    ) -> Self {
        let key = derive_key(&parent_key, &input);
        let global_id = GlobalId::compute(&key, &parent_key, &input, &output, &backend);
        Self {
            key,
            parent_key,
            input,
            output,
            created_at,
            backend,
            global_id,
            cacheable: true,
        }
    }

    pub fn recompute_global_id(&self) -> GlobalId {
        GlobalId::compute(
            &self.key,
            &self.parent_key,
            &self.input,
            &self.output,
            &self.backend,
        )
    }

    pub fn key_is_consistent(&self) -> bool {
        derive_key(&self.parent_key, &self.input) == self.key
    }
}
