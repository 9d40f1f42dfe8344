//! Bounded in-memory layer in front of the persistent store.
//!
//! Capacity is counted in entries. When occupancy first reaches the flag
//! threshold a near-capacity flag is raised, and when the layer is full an
//! at-capacity flag; each re-arms once occupancy falls back below its level.

use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use lru::LruCache;

use crate::cache::{CacheEntry, Clock, PrefixKey, SystemClock, Timestamp};

pub const DEFAULT_CAPACITY: usize = 4096;
pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LruConfig {
    pub capacity_entries: usize,
    pub flag_threshold: f64,
}

impl Default for LruConfig {
    fn default() -> Self {
        Self {
            capacity_entries: DEFAULT_CAPACITY,
            flag_threshold: DEFAULT_FLAG_THRESHOLD,
        }
    }
}

impl LruConfig {
    pub fn with_capacity(capacity_entries: usize) -> Self {
        Self {
            capacity_entries,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlagKind {
    NearCapacity,
    AtCapacity,
}

impl std::fmt::Display for FlagKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FlagKind::NearCapacity => "near-capacity",
            FlagKind::AtCapacity => "at-capacity",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityFlag {
    pub raised_at: Timestamp,
    pub kind: FlagKind,
    pub occupancy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub resident_entries: usize,
    pub repeat_inserts: u64,
    pub flags: Vec<CapacityFlag>,
}

impl CacheStats {
    pub fn lookups(&self) -> u64 {
        self.hits + self.misses
    }
}

/// The get/put/evict contract a replacement policy has to honor.
pub trait EvictionPolicy: Send {
    /// Returns the value and marks it most recently used.
    fn get(&mut self, key: &PrefixKey) -> Option<&CacheEntry>;

    /// Makes `entry` resident and most recent. Returns the key pushed out to
    /// make room, if any.
    fn put(&mut self, entry: CacheEntry) -> Option<PrefixKey>;

    fn contains(&self, key: &PrefixKey) -> bool;

    fn remove(&mut self, key: &PrefixKey) -> Option<CacheEntry>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn clear(&mut self);
}

pub struct Lru(LruCache<PrefixKey, CacheEntry>);

impl Lru {
    pub fn new(capacity: NonZeroUsize) -> Self {
        Self(LruCache::new(capacity))
    }
}

impl EvictionPolicy for Lru {
    fn get(&mut self, key: &PrefixKey) -> Option<&CacheEntry> {
        self.0.get(key)
    }

    fn put(&mut self, entry: CacheEntry) -> Option<PrefixKey> {
        let key = entry.key;
        match self.0.push(key, entry) {
            Some((evicted, _)) if evicted != key => Some(evicted),
            _ => None,
        }
    }

    fn contains(&self, key: &PrefixKey) -> bool {
        self.0.contains(key)
    }

    fn remove(&mut self, key: &PrefixKey) -> Option<CacheEntry> {
        self.0.pop(key)
    }

    fn len(&self) -> usize {
        self.0.len()
    }

    fn clear(&mut self) {
        self.0.clear()
    }
}

struct State {
    policy: Option<Box<dyn EvictionPolicy>>,
    stats: CacheStats,
    near_armed: bool,
    full_armed: bool,
}

/// Thread-safe memory layer. All operations go through one critical section,
/// so every stats snapshot is consistent.
pub struct MemLayer {
    config: LruConfig,
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
}

impl std::fmt::Debug for MemLayer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemLayer")
            .field("config", &self.config)
            .field("stats", &self.stats())
            .finish()
    }
}

impl MemLayer {
    pub fn new(config: LruConfig) -> Self {
        Self::with_clock(config, Arc::new(SystemClock::default()))
    }

    pub fn with_clock(config: LruConfig, clock: Arc<dyn Clock>) -> Self {
        let policy = NonZeroUsize::new(config.capacity_entries)
            .map(|c| Box::new(Lru::new(c)) as Box<dyn EvictionPolicy>);
        Self::with_policy(config, clock, policy)
    }

    /// `policy = None` disables the layer.
    pub fn with_policy(
        config: LruConfig,
        clock: Arc<dyn Clock>,
        policy: Option<Box<dyn EvictionPolicy>>,
    ) -> Self {
        Self {
            config,
            clock,
            state: Mutex::new(State {
                policy,
                stats: CacheStats::default(),
                near_armed: true,
                full_armed: true,
            }),
        }
    }

    pub fn config(&self) -> LruConfig {
        self.config
    }

    pub fn is_enabled(&self) -> bool {
        self.config.capacity_entries > 0
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn get(&self, key: &PrefixKey) -> Option<CacheEntry> {
        let mut state = self.lock();
        let found = state.policy.as_mut().and_then(|p| p.get(key).cloned());
        if found.is_some() {
            state.stats.hits += 1;
        } else {
            state.stats.misses += 1;
        }
        found
    }

    pub fn put(&self, entry: CacheEntry) -> Option<PrefixKey> {
        let mut state = self.lock();
        let state = &mut *state;
        let policy = state.policy.as_mut()?;
        if policy.contains(&entry.key) {
            state.stats.repeat_inserts += 1;
        }
        let evicted = policy.put(entry);
        if evicted.is_some() {
            state.stats.evictions += 1;
        }
        self.update_flags(state);
        evicted
    }

    pub fn remove(&self, key: &PrefixKey) -> Option<CacheEntry> {
        let mut state = self.lock();
        let removed = state.policy.as_mut().and_then(|p| p.remove(key));
        self.update_flags(&mut state);
        removed
    }

    pub fn clear(&self) {
        let mut state = self.lock();
        if let Some(p) = state.policy.as_mut() {
            p.clear();
        }
        self.update_flags(&mut state);
    }

    pub fn stats(&self) -> CacheStats {
        let state = self.lock();
        let mut stats = state.stats.clone();
        stats.resident_entries = state.policy.as_ref().map_or(0, |p| p.len());
        stats
    }

    /// Zeroes the counters and forgets raised flags. Resident entries stay.
    pub fn reset_stats(&self) {
        self.lock().stats = CacheStats::default();
    }

    pub fn occupancy(&self) -> f64 {
        let state = self.lock();
        self.occupancy_of(state.policy.as_ref().map_or(0, |p| p.len()))
    }

    fn occupancy_of(&self, resident: usize) -> f64 {
        if self.config.capacity_entries == 0 {
            0.0
        } else {
            resident as f64 / self.config.capacity_entries as f64
        }
    }

    fn update_flags(&self, state: &mut State) {
        let Some(resident) = state.policy.as_ref().map(|p| p.len()) else {
            return;
        };
        let occupancy = self.occupancy_of(resident);
        let now = || self.clock.now();
        if occupancy >= self.config.flag_threshold {
            if state.near_armed {
                state.near_armed = false;
                state.stats.flags.push(CapacityFlag {
                    raised_at: now(),
                    kind: FlagKind::NearCapacity,
                    occupancy,
                });
            }
        } else {
            state.near_armed = true;
        }
        if resident >= self.config.capacity_entries {
            if state.full_armed {
                state.full_armed = false;
                state.stats.flags.push(CapacityFlag {
                    raised_at: now(),
                    kind: FlagKind::AtCapacity,
                    occupancy,
                });
            }
        } else {
            state.full_armed = true;
        }
    }
}
