//! Single-file export format: the header line followed by every record line,
//! in log order, with the same encoding as the store itself.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use crate::cache::index::EntryIndex;
use crate::persist::codec::{decode_header, encode_record, scan_log, HeaderError};
use crate::persist::store::{is_store_dir, HEADER_FILE, LOG_FILE};
use crate::persist::{CacheStore, StoreError};

impl CacheStore {
    /// Writes a portable archive of the whole store. Output depends only on
    /// the header and the records, so unchanged stores export byte-identically.
    pub fn export(&self, destination: impl AsRef<Path>) -> Result<usize, StoreError> {
        let destination = destination.as_ref();
        let records = self.records()?;
        let mut out = String::new();
        out.push_str(&self.header().to_line());
        out.push('\n');
        for r in &records {
            out.push_str(&encode_record(r));
            out.push('\n');
        }
        let io = |source| StoreError::Io {
            path: destination.to_path_buf(),
            source,
        };
        let mut f = File::create(destination).map_err(io)?;
        f.write_all(out.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        Ok(records.len())
    }

    /// Rebuilds a store at `destination` from an archive, checking every
    /// record on the way in. Nothing is written unless the whole archive is
    /// valid.
    pub fn import(
        archive: impl AsRef<Path>,
        destination: impl AsRef<Path>,
    ) -> Result<usize, StoreError> {
        let archive = archive.as_ref();
        let destination = destination.as_ref();
        if is_store_dir(destination) || dir_has_entries(destination) {
            return Err(StoreError::AlreadyExists(destination.to_path_buf()));
        }
        let bytes = fs::read(archive).map_err(|source| StoreError::Io {
            path: archive.to_path_buf(),
            source,
        })?;
        let (header_line, body) = match bytes.iter().position(|b| *b == b'\n') {
            Some(n) => (&bytes[..n], &bytes[n + 1..]),
            None => (&bytes[..], &[][..]),
        };
        decode_header(header_line).map_err(|e| match e {
            HeaderError::Mismatch {
                magic,
                format_version,
            } => StoreError::FormatMismatch {
                magic,
                format_version,
            },
            HeaderError::Malformed(reason) => StoreError::CorruptHeader(reason),
        })?;
        let (scanned, _) = scan_log(body);
        let mut index = EntryIndex::new();
        for line in &scanned {
            let corrupt = |reason: String| StoreError::Corrupt {
                ordinal: line.ordinal,
                reason,
            };
            let entry = line.result.as_ref().map_err(|r| corrupt(r.clone()))?;
            index
                .insert(entry.clone())
                .map_err(|e| corrupt(e.to_string()))?;
        }

        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::Io { path, source }
        };
        fs::create_dir_all(destination).map_err(io(destination))?;
        let mut header_bytes = header_line.to_vec();
        header_bytes.push(b'\n');
        fs::write(destination.join(HEADER_FILE), header_bytes).map_err(io(destination))?;
        fs::write(destination.join(LOG_FILE), body).map_err(io(destination))?;
        Ok(scanned.len())
    }
}

fn dir_has_entries(dir: &Path) -> bool {
    fs::read_dir(dir)
        .map(|mut d| d.next().is_some())
        .unwrap_or(false)
}
