use std::collections::HashSet;
use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use log::debug;

use crate::cache::index::{validate, EntryIndex, InsertOutcome};
use crate::cache::{session_root, CacheEntry, GlobalId, PrefixKey, Timestamp};
use crate::descriptor::BackendDescriptor;
use crate::persist::codec::{decode_header, encode_record, scan_log, HeaderError, StoreHeader};
use crate::persist::verify::{CorruptRecord, OrphanParent, VerifyReport};
use crate::persist::StoreError;

pub const HEADER_FILE: &str = "header";
pub const LOG_FILE: &str = "entries.log";
pub const LOCK_FILE: &str = "LOCK";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessMode {
    /// Holds the advisory writer lock until closed.
    Writer,
    /// Point-in-time view; never writes and never takes the writer lock.
    Snapshot,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreStats {
    pub hits: u64,
    pub misses: u64,
    pub repeat_inserts: u64,
    pub records: usize,
    pub keys: usize,
}

#[derive(Debug)]
struct Inner {
    index: EntryIndex,
    records: Vec<CacheEntry>,
    log: Option<File>,
    lock: Option<File>,
    closed: bool,
}

/// Durable append-only store of cache entries.
///
/// On disk a store is a directory holding `header`, `entries.log` (one
/// record per line) and `LOCK`. Lookups take a shared lock on the in-memory
/// index; appends are serialized and hit the disk before the index changes.
#[derive(Debug)]
pub struct CacheStore {
    dir: Option<PathBuf>,
    header: StoreHeader,
    mode: AccessMode,
    inner: RwLock<Inner>,
    hits: AtomicU64,
    misses: AtomicU64,
    repeat_inserts: AtomicU64,
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn read_header(dir: &Path) -> Result<StoreHeader, StoreError> {
    let path = dir.join(HEADER_FILE);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(StoreError::NotFound(dir.to_path_buf()))
        }
        Err(e) => return Err(io_err(&path, e)),
    };
    decode_header(&bytes).map_err(|e| match e {
        HeaderError::Mismatch {
            magic,
            format_version,
        } => StoreError::FormatMismatch {
            magic,
            format_version,
        },
        HeaderError::Malformed(reason) => StoreError::CorruptHeader(reason),
    })
}

pub(crate) fn is_store_dir(dir: &Path) -> bool {
    dir.join(HEADER_FILE).exists() || dir.join(LOG_FILE).exists()
}

fn take_writer_lock(dir: &Path) -> Result<File, StoreError> {
    let path = dir.join(LOCK_FILE);
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&path)
        .map_err(|e| io_err(&path, e))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(TryLockError::WouldBlock) => Err(StoreError::Locked(dir.to_path_buf())),
        Err(TryLockError::Error(e)) => Err(io_err(&path, e)),
    }
}

/// True when some process currently holds the writer lock.
fn writer_active(dir: &Path) -> bool {
    let Ok(file) = File::open(dir.join(LOCK_FILE)) else {
        return false;
    };
    match file.try_lock_shared() {
        Ok(()) => {
            let _ = file.unlock();
            false
        }
        Err(_) => true,
    }
}

impl CacheStore {
    pub fn create(dir: impl AsRef<Path>, backend: &BackendDescriptor) -> Result<Self, StoreError> {
        Self::create_at(dir, backend, Timestamp::now())
    }

    /// Like [`create`](Self::create) with an explicit header timestamp.
    pub fn create_at(
        dir: impl AsRef<Path>,
        backend: &BackendDescriptor,
        created_at: Timestamp,
    ) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        if backend.name.is_empty() {
            return Err(StoreError::Cache(crate::cache::CacheError::InvalidEntry(
                "backend name is empty".into(),
            )));
        }
        if is_store_dir(dir) {
            return Err(StoreError::AlreadyExists(dir.to_path_buf()));
        }
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let lock = take_writer_lock(dir)?;
        let header = StoreHeader::new(backend, created_at);
        write_new_file(
            &dir.join(HEADER_FILE),
            format!("{}\n", header.to_line()).as_bytes(),
        )?;
        write_new_file(&dir.join(LOG_FILE), b"")?;
        sync_dir(dir);
        debug!("created store at {} for {}", dir.display(), backend);
        Self::open_locked(dir, lock)
    }

    /// Opens an existing store for reading and appending.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        // header problems take precedence over lock contention
        read_header(dir)?;
        let lock = take_writer_lock(dir)?;
        Self::open_locked(dir, lock)
    }

    /// Opens a read-only view. If a writer is mid-append, its unterminated
    /// final line is left out of the view.
    pub fn open_snapshot(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        let header = read_header(dir)?;
        let tolerate_torn = writer_active(dir);
        let (records, index) = load_records(dir, tolerate_torn)?;
        Ok(Self::assemble(
            Some(dir),
            header,
            AccessMode::Snapshot,
            records,
            index,
            None,
            None,
        ))
    }

    /// A store with no files behind it.
    pub fn ephemeral(backend: &BackendDescriptor) -> Self {
        Self::assemble(
            None,
            StoreHeader::new(backend, Timestamp::now()),
            AccessMode::Writer,
            Vec::new(),
            EntryIndex::new(),
            None,
            None,
        )
    }

    fn open_locked(dir: &Path, lock: File) -> Result<Self, StoreError> {
        let header = read_header(dir)?;
        let (records, index) = load_records(dir, false)?;
        let log_path = dir.join(LOG_FILE);
        let log = OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?;
        Ok(Self::assemble(
            Some(dir),
            header,
            AccessMode::Writer,
            records,
            index,
            Some(log),
            Some(lock),
        ))
    }

    fn assemble(
        dir: Option<&Path>,
        header: StoreHeader,
        mode: AccessMode,
        records: Vec<CacheEntry>,
        index: EntryIndex,
        log: Option<File>,
        lock: Option<File>,
    ) -> Self {
        Self {
            dir: dir.map(Path::to_path_buf),
            header,
            mode,
            inner: RwLock::new(Inner {
                index,
                records,
                log,
                lock,
                closed: false,
            }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            repeat_inserts: AtomicU64::new(0),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    /// Backend identity the store was created for; every session root is
    /// derived from it.
    pub fn backend(&self) -> BackendDescriptor {
        self.header.backend()
    }

    pub fn mode(&self) -> AccessMode {
        self.mode
    }

    fn read(&self) -> Result<std::sync::RwLockReadGuard<'_, Inner>, StoreError> {
        let guard = self.inner.read().unwrap_or_else(|p| p.into_inner());
        if guard.closed {
            return Err(StoreError::Closed);
        }
        Ok(guard)
    }

    fn write(&self) -> Result<std::sync::RwLockWriteGuard<'_, Inner>, StoreError> {
        if self.mode == AccessMode::Snapshot {
            return Err(StoreError::ReadOnly);
        }
        let guard = self.inner.write().unwrap_or_else(|p| p.into_inner());
        if guard.closed {
            return Err(StoreError::Closed);
        }
        Ok(guard)
    }

    /// Counted lookup: a hit or miss is recorded in the store statistics.
    pub fn lookup(&self, key: &PrefixKey) -> Result<Option<CacheEntry>, StoreError> {
        let found = self.read()?.index.get(key).cloned();
        let counter = if found.is_some() {
            &self.hits
        } else {
            &self.misses
        };
        counter.fetch_add(1, Ordering::Relaxed);
        Ok(found)
    }

    /// Lookup that leaves the statistics alone.
    pub fn peek(&self, key: &PrefixKey) -> Result<Option<CacheEntry>, StoreError> {
        Ok(self.read()?.index.get(key).cloned())
    }

    /// Stores `entry` unless an identical interaction is already stored.
    pub fn insert(&self, entry: CacheEntry) -> Result<InsertOutcome, StoreError> {
        let mut inner = self.write()?;
        let outcome = inner.index.check(&entry)?;
        match outcome {
            InsertOutcome::AlreadyPresent => {
                self.repeat_inserts.fetch_add(1, Ordering::Relaxed);
            }
            InsertOutcome::Inserted => self.write_record(&mut inner, entry)?,
        }
        Ok(outcome)
    }

    /// Appends a record for `entry` even if its key is already stored with
    /// the same output (for example to keep a second timestamp). Conflicting
    /// output is still refused.
    pub fn append(&self, entry: CacheEntry) -> Result<GlobalId, StoreError> {
        let mut inner = self.write()?;
        if inner.index.check(&entry)? == InsertOutcome::AlreadyPresent {
            self.repeat_inserts.fetch_add(1, Ordering::Relaxed);
        }
        let id = entry.global_id;
        self.write_record(&mut inner, entry)?;
        Ok(id)
    }

    fn write_record(&self, inner: &mut Inner, entry: CacheEntry) -> Result<(), StoreError> {
        validate(&entry)?;
        if let Some(log) = inner.log.as_mut() {
            let mut line = encode_record(&entry);
            line.push('\n');
            let path = self.dir.as_deref().unwrap_or(Path::new(LOG_FILE));
            log.write_all(line.as_bytes())
                .map_err(|e| io_err(path, e))?;
            log.sync_data().map_err(|e| io_err(path, e))?;
        }
        inner.index.insert(entry.clone())?;
        inner.records.push(entry);
        Ok(())
    }

    /// Number of records in the log.
    pub fn entry_count(&self) -> Result<usize, StoreError> {
        Ok(self.read()?.records.len())
    }

    /// Number of distinct keys.
    pub fn key_count(&self) -> Result<usize, StoreError> {
        Ok(self.read()?.index.len())
    }

    /// All records in append order.
    pub fn records(&self) -> Result<Vec<CacheEntry>, StoreError> {
        Ok(self.read()?.records.clone())
    }

    pub fn stats(&self) -> Result<StoreStats, StoreError> {
        let inner = self.read()?;
        Ok(StoreStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            repeat_inserts: self.repeat_inserts.load(Ordering::Relaxed),
            records: inner.records.len(),
            keys: inner.index.len(),
        })
    }

    /// Re-checks the store. Directory stores are re-read from disk so damage
    /// done since opening is seen.
    pub fn verify(&self) -> Result<VerifyReport, StoreError> {
        match &self.dir {
            Some(dir) => {
                drop(self.read()?);
                crate::persist::verify::verify_dir(dir)
            }
            None => {
                let records = self.records()?;
                Ok(verify_entries(
                    &self.backend(),
                    records.into_iter().enumerate().map(|(i, e)| (i, Ok(e))),
                ))
            }
        }
    }

    /// Flushes and releases the writer lock. Further operations fail with
    /// [`StoreError::Closed`].
    pub fn close(&self) -> Result<(), StoreError> {
        let mut inner = self.inner.write().unwrap_or_else(|p| p.into_inner());
        if inner.closed {
            return Ok(());
        }
        inner.closed = true;
        if let Some(log) = inner.log.take() {
            let path = self.dir.as_deref().unwrap_or(Path::new(LOG_FILE));
            log.sync_all().map_err(|e| io_err(path, e))?;
        }
        if let Some(lock) = inner.lock.take() {
            let _ = lock.unlock();
        }
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        self.inner.read().unwrap_or_else(|p| p.into_inner()).closed
    }
}

impl Drop for CacheStore {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

fn write_new_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut f = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    f.write_all(bytes).map_err(|e| io_err(path, e))?;
    f.sync_all().map_err(|e| io_err(path, e))
}

fn sync_dir(dir: &Path) {
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

/// Reads and checks every record, failing on the first bad one.
fn load_records(
    dir: &Path,
    tolerate_torn: bool,
) -> Result<(Vec<CacheEntry>, EntryIndex), StoreError> {
    let path = dir.join(LOG_FILE);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let (scanned, torn) = scan_log(&bytes);
    let mut index = EntryIndex::new();
    let mut records = Vec::with_capacity(scanned.len());
    for line in scanned {
        if tolerate_torn && Some(line.ordinal) == torn {
            break;
        }
        let entry = line.result.map_err(|reason| StoreError::Corrupt {
            ordinal: line.ordinal,
            reason,
        })?;
        index
            .insert(entry.clone())
            .map_err(|e| StoreError::Corrupt {
                ordinal: line.ordinal,
                reason: e.to_string(),
            })?;
        records.push(entry);
    }
    Ok((records, index))
}

/// Core of `verify`: per-record integrity, key-chain consistency, output
/// uniqueness, and parent resolution.
pub(crate) fn verify_entries<I>(store_backend: &BackendDescriptor, lines: I) -> VerifyReport
where
    I: IntoIterator<Item = (usize, Result<CacheEntry, String>)>,
{
    let store_root = session_root(store_backend);
    let mut index = EntryIndex::new();
    let mut seen: HashSet<PrefixKey> = HashSet::new();
    let mut report = VerifyReport::default();
    for (ordinal, result) in lines {
        let entry = match result {
            Ok(e) => e,
            Err(reason) => {
                report
                    .corrupt_records
                    .push(CorruptRecord { ordinal, reason });
                continue;
            }
        };
        if let Err(e) = index.insert(entry.clone()) {
            report.corrupt_records.push(CorruptRecord {
                ordinal,
                reason: e.to_string(),
            });
            continue;
        }
        let parent = entry.parent_key;
        let resolved = parent == store_root
            || seen.contains(&parent)
            || parent == session_root(&entry.backend);
        if !resolved {
            report.orphan_parents.push(OrphanParent {
                ordinal,
                parent_key: parent,
            });
        }
        seen.insert(entry.key);
        report.ok_records += 1;
    }
    report
}
