//! Hash-chain prefix keys.
//!
//! A session starts at a root derived from the backend identity. Every input
//! extends the chain:
//!
//! ```text
//! key(k) = SHA-256(key(k-1) || u64_be(len(input_k)) || input_k)
//! ```
//!
//! so the key at step `k` names the entire input history `i_0..=i_k`. The
//! length prefix keeps `["a", "b"]` and `["ab", ""]` apart.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::descriptor::BackendDescriptor;

/// Domain tag for root keys.
pub const ROOT_TAG: &[u8; 4] = b"RC1\0";

/// One opaque input sent to a backend. Byte-exact; may be empty.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct InputAtom(Vec<u8>);

impl InputAtom {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Lossy UTF-8 rendering for reports and logs.
    pub fn preview(&self) -> String {
        String::from_utf8_lossy(&self.0).into_owned()
    }
}

impl From<&str> for InputAtom {
    fn from(s: &str) -> Self {
        Self(s.as_bytes().to_vec())
    }
}

impl From<String> for InputAtom {
    fn from(s: String) -> Self {
        Self(s.into_bytes())
    }
}

impl From<&[u8]> for InputAtom {
    fn from(b: &[u8]) -> Self {
        Self(b.to_vec())
    }
}

impl fmt::Debug for InputAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InputAtom({:?})", String::from_utf8_lossy(&self.0))
    }
}

/// A backend response and how long the live call took.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct OutputRecord {
    pub bytes: Vec<u8>,
    pub elapsed_ms: u64,
}

impl OutputRecord {
    pub fn new(bytes: impl Into<Vec<u8>>, elapsed_ms: u64) -> Self {
        Self {
            bytes: bytes.into(),
            elapsed_ms,
        }
    }

    /// Output equality is byte equality; elapsed time is metadata.
    pub fn same_bytes(&self, other: &OutputRecord) -> bool {
        self.bytes == other.bytes
    }

    pub fn preview(&self) -> String {
        String::from_utf8_lossy(&self.bytes).into_owned()
    }
}

impl fmt::Debug for OutputRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OutputRecord")
            .field("bytes", &String::from_utf8_lossy(&self.bytes))
            .field("elapsed_ms", &self.elapsed_ms)
            .finish()
    }
}

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest32(pub [u8; 32]);

impl Digest32 {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Parses exactly 64 lowercase hex characters.
    pub fn from_hex(s: &str) -> Result<Self, ParseDigestError> {
        if s.len() != 64 {
            return Err(ParseDigestError::Length(s.len()));
        }
        if !s
            .bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return Err(ParseDigestError::NotLowerHex);
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| ParseDigestError::NotLowerHex)?;
        Ok(Self(out))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseDigestError {
    #[error("expected 64 hex characters, got {0}")]
    Length(usize),
    #[error("digest must be lowercase hex")]
    NotLowerHex,
}

impl fmt::Display for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..16])
    }
}

impl FromStr for Digest32 {
    type Err = ParseDigestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_hex(s)
    }
}

impl Serialize for Digest32 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest32 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        Self::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Position in an interaction sequence.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrefixKey(pub Digest32);

impl PrefixKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(Digest32(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        self.0.as_bytes()
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }

    pub fn from_hex(s: &str) -> Result<Self, ParseDigestError> {
        Digest32::from_hex(s).map(Self)
    }
}

impl fmt::Display for PrefixKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for PrefixKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrefixKey({:?})", self.0)
    }
}

/// Root of every key chain opened against `backend`.
pub fn session_root(backend: &BackendDescriptor) -> PrefixKey {
    let mut hasher = Sha256::new();
    hasher.update(ROOT_TAG);
    hasher.update(backend.name.as_bytes());
    hasher.update(b"\0");
    hasher.update(backend.version.as_bytes());
    hasher.update(b"\0");
    hasher.update(backend.config_fingerprint.as_bytes());
    PrefixKey::from_bytes(hasher.finalize().into())
}

/// Extends a key chain by one input.
pub fn derive_key(parent: &PrefixKey, input: &InputAtom) -> PrefixKey {
    let mut hasher = Sha256::new();
    hasher.update(parent.as_bytes());
    hasher.update((input.len() as u64).to_be_bytes());
    hasher.update(input.as_bytes());
    PrefixKey::from_bytes(hasher.finalize().into())
}

/// Folds `derive_key` over `inputs`, starting at `root`.
pub fn key_chain<'a, I>(root: PrefixKey, inputs: I) -> Vec<PrefixKey>
where
    I: IntoIterator<Item = &'a InputAtom>,
{
    inputs
        .into_iter()
        .scan(root, |key, input| {
            *key = derive_key(key, input);
            Some(*key)
        })
        .collect()
}
