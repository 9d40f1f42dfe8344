//! Canonical binary encoding shared by global identifiers and record
//! checksums: each field is written as `u64_be(len) || bytes`.

use sha2::{Digest, Sha256};

use crate::cache::key::Digest32;

#[derive(Default)]
pub(crate) struct CanonicalHasher {
    inner: Sha256,
}

impl CanonicalHasher {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    pub(crate) fn field(&mut self, bytes: &[u8]) -> &mut Self {
        self.inner.update((bytes.len() as u64).to_be_bytes());
        self.inner.update(bytes);
        self
    }

    pub(crate) fn finish(self) -> Digest32 {
        Digest32(self.inner.finalize().into())
    }
}
