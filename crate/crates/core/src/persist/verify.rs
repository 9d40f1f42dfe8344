use std::fmt;
use std::fs;
use std::path::Path;

use crate::cache::PrefixKey;
use crate::persist::codec::scan_log;
use crate::persist::store::{read_header, verify_entries, LOG_FILE};
use crate::persist::StoreError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptRecord {
    /// 0-based position of the record (line) in the log.
    pub ordinal: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrphanParent {
    pub ordinal: usize,
    pub parent_key: PrefixKey,
}

/// Outcome of an integrity pass. Corruption is data, not an error.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub ok_records: usize,
    pub corrupt_records: Vec<CorruptRecord>,
    /// Parents that are neither a session root nor an earlier key. Expected
    /// in partial imports; reported as warnings.
    pub orphan_parents: Vec<OrphanParent>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.corrupt_records.is_empty()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ok records: {}", self.ok_records)?;
        writeln!(f, "{} corrupt", self.corrupt_records.len())?;
        for c in &self.corrupt_records {
            writeln!(f, "  corrupt record #{}: {}", c.ordinal, c.reason)?;
        }
        writeln!(f, "{} orphan parents", self.orphan_parents.len())?;
        for o in &self.orphan_parents {
            writeln!(
                f,
                "  warning: record #{} has unresolved parent {}",
                o.ordinal, o.parent_key
            )?;
        }
        Ok(())
    }
}

/// Verifies the store at `dir` straight from disk, without taking the writer
/// lock. Works on stores that no longer open.
pub fn verify_dir(dir: &Path) -> Result<VerifyReport, StoreError> {
    let header = read_header(dir)?;
    let path = dir.join(LOG_FILE);
    let bytes = fs::read(&path).map_err(|source| StoreError::Io { path, source })?;
    let (scanned, _) = scan_log(&bytes);
    Ok(verify_entries(
        &header.backend(),
        scanned.into_iter().map(|l| (l.ordinal, l.result)),
    ))
}
