//! Text encoding of the header file and of record lines.
//!
//! A record line is one compact JSON object with a fixed field order. Integrity
//! is checked over a canonical binary encoding of the decoded fields, but the
//! decoder also insists that the line is exactly the canonical rendering of
//! what it decoded, so any edit to the text is caught even when it would
//! decode to the same values.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::cache::key::Digest32;
use crate::cache::{CacheEntry, GlobalId, InputAtom, OutputRecord, PrefixKey, Timestamp};
use crate::canon::CanonicalHasher;
use crate::descriptor::BackendDescriptor;

pub const MAGIC: &str = "replaycache-store";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreHeader {
    pub magic: String,
    pub format_version: u32,
    pub backend_name: String,
    pub backend_version: String,
    pub config_fingerprint: String,
    pub created_at: Timestamp,
}

impl StoreHeader {
    pub fn new(backend: &BackendDescriptor, created_at: Timestamp) -> Self {
        Self {
            magic: MAGIC.to_string(),
            format_version: FORMAT_VERSION,
            backend_name: backend.name.clone(),
            backend_version: backend.version.clone(),
            config_fingerprint: backend.config_fingerprint.clone(),
            created_at,
        }
    }

    pub fn backend(&self) -> BackendDescriptor {
        BackendDescriptor::new(
            &self.backend_name,
            &self.backend_version,
            &self.config_fingerprint,
        )
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("header serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeaderError {
    /// Readable, but not a store this build understands.
    Mismatch {
        magic: String,
        format_version: Option<u64>,
    },
    Malformed(String),
}

pub fn decode_header(text: &[u8]) -> Result<StoreHeader, HeaderError> {
    let line = text.strip_suffix(b"\n").unwrap_or(text);
    let value: serde_json::Value =
        serde_json::from_slice(line).map_err(|e| HeaderError::Malformed(e.to_string()))?;
    let magic = value
        .get("magic")
        .and_then(|m| m.as_str())
        .unwrap_or_default();
    let version = value.get("format_version").and_then(|v| v.as_u64());
    if magic != MAGIC || version != Some(FORMAT_VERSION as u64) {
        return Err(HeaderError::Mismatch {
            magic: magic.to_string(),
            format_version: version,
        });
    }
    serde_json::from_value(value).map_err(|e| HeaderError::Malformed(e.to_string()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    key: PrefixKey,
    parent_key: PrefixKey,
    input_b64: String,
    output_b64: String,
    elapsed_ms: u64,
    created_at: Timestamp,
    backend_name: String,
    backend_version: String,
    config_fingerprint: String,
    global_id: GlobalId,
    record_checksum: Digest32,
}

/// SHA-256 over the canonical encoding of every persisted field except the
/// checksum itself.
pub fn record_checksum(entry: &CacheEntry) -> Digest32 {
    let created_at = entry.created_at.to_rfc3339();
    let mut h = CanonicalHasher::new();
    h.field(entry.key.as_bytes())
        .field(entry.parent_key.as_bytes())
        .field(entry.input.as_bytes())
        .field(&entry.output.bytes)
        .field(&entry.output.elapsed_ms.to_be_bytes())
        .field(created_at.as_bytes())
        .field(entry.backend.name.as_bytes())
        .field(entry.backend.version.as_bytes())
        .field(entry.backend.config_fingerprint.as_bytes())
        .field(entry.global_id.0.as_bytes());
    h.finish()
}

/// Renders `entry` as a record line (without the trailing newline). The
/// checksum is computed from the fields as given; consistency of key and
/// global id is the caller's responsibility.
pub fn encode_record(entry: &CacheEntry) -> String {
    let line = RecordLine {
        key: entry.key,
        parent_key: entry.parent_key,
        input_b64: B64.encode(entry.input.as_bytes()),
        output_b64: B64.encode(&entry.output.bytes),
        elapsed_ms: entry.output.elapsed_ms,
        created_at: entry.created_at,
        backend_name: entry.backend.name.clone(),
        backend_version: entry.backend.version.clone(),
        config_fingerprint: entry.backend.config_fingerprint.clone(),
        global_id: entry.global_id,
        record_checksum: record_checksum(entry),
    };
    serde_json::to_string(&line).expect("record serializes")
}

fn decode_b64(field: &str, text: &str) -> Result<Vec<u8>, String> {
    let bytes = B64
        .decode(text)
        .map_err(|e| format!("{field}: bad base64: {e}"))?;
    if B64.encode(&bytes) != text {
        return Err(format!("{field}: non-canonical base64"));
    }
    Ok(bytes)
}

/// Decodes and fully checks one record line (without its newline).
pub fn decode_record(line: &[u8]) -> Result<CacheEntry, String> {
    let parsed: RecordLine =
        serde_json::from_slice(line).map_err(|e| format!("unparseable record: {e}"))?;
    let canonical = serde_json::to_vec(&parsed).expect("record serializes");
    if canonical != line {
        return Err("record text is not in canonical form".into());
    }
    let entry = CacheEntry {
        key: parsed.key,
        parent_key: parsed.parent_key,
        input: InputAtom::new(decode_b64("input_b64", &parsed.input_b64)?),
        output: OutputRecord::new(
            decode_b64("output_b64", &parsed.output_b64)?,
            parsed.elapsed_ms,
        ),
        created_at: parsed.created_at,
        backend: BackendDescriptor::new(
            parsed.backend_name,
            parsed.backend_version,
            parsed.config_fingerprint,
        ),
        global_id: parsed.global_id,
        cacheable: true,
    };
    if record_checksum(&entry) != parsed.record_checksum {
        return Err("record checksum mismatch".into());
    }
    if !entry.key_is_consistent() {
        return Err("key is not derived from parent_key and input".into());
    }
    if entry.recompute_global_id() != entry.global_id {
        return Err("global_id does not match record content".into());
    }
    if entry.backend.name.is_empty() {
        return Err("backend name is empty".into());
    }
    Ok(entry)
}

/// One line of a log, in file order.
#[derive(Debug)]
pub struct ScannedLine {
    pub ordinal: usize,
    pub result: Result<CacheEntry, String>,
}

/// Splits a log into lines and decodes each. An unterminated final line is
/// returned separately as a torn tail; callers decide whether it is an
/// in-flight append or damage.
pub fn scan_log(bytes: &[u8]) -> (Vec<ScannedLine>, Option<usize>) {
    let mut lines: Vec<&[u8]> = bytes.split(|b| *b == b'\n').collect();
    // `split` always yields a final segment; it is empty when the log ends
    // with a newline.
    let tail = lines.pop().unwrap_or_default();
    let mut scanned: Vec<ScannedLine> = lines
        .into_iter()
        .enumerate()
        .map(|(ordinal, line)| ScannedLine {
            ordinal,
            result: decode_record(line),
        })
        .collect();
    let torn = if tail.is_empty() {
        None
    } else {
        let ordinal = scanned.len();
        scanned.push(ScannedLine {
            ordinal,
            result: Err("unterminated final record".into()),
        });
        Some(ordinal)
    };
    (scanned, torn)
}
