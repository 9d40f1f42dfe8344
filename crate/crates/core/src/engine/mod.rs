//! Runs sessions over the layered cache in record, replay or hybrid mode.
//!
//! Keys are always chained from the store's own backend identity, so a
//! store stays usable when the live tool is upgraded; whether that is
//! acceptable is decided by the [`VersionPolicy`].
//!
//! In hybrid mode the live backend only sees the steps it has to answer.
//! When a miss follows cached hits, the hits are re-sent first so the tool
//! is in the state the miss was issued in.

mod policy;
mod report;

use std::sync::Arc;

use log::debug;

pub use policy::{check_version, RunMode, VersionPolicy, VersionVerdict};
pub use report::{SessionReport, Warning};

use crate::backend::{BackendAdapter, BackendError};
use crate::cache::{
    classify, CacheEntry, CacheError, CacheabilityRule, Clock, InputAtom, InsertOutcome,
    OutputRecord, SessionContext, SystemClock, Verdict,
};
use crate::descriptor::BackendDescriptor;
use crate::memlayer::{CacheStats, CapacityFlag, MemLayer};
use crate::persist::{CacheStore, StoreError, StoreStats};

pub const DEFAULT_SLOW_THRESHOLD_MS: u64 = 1000;

/// Inputs of one evaluation cycle, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionScript {
    pub inputs: Vec<InputAtom>,
    /// Backend the script expects to run against, if it says.
    pub backend: Option<BackendDescriptor>,
}

impl SessionScript {
    pub fn new<I, T>(inputs: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<InputAtom>,
    {
        Self {
            inputs: inputs.into_iter().map(Into::into).collect(),
            backend: None,
        }
    }

    pub fn expecting(mut self, backend: BackendDescriptor) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayMissCause {
    /// No cached entry for this input history.
    DivergentPrefix,
    /// The step is labeled non-cacheable, so it was never stored.
    NonCacheable,
}

impl std::fmt::Display for ReplayMissCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReplayMissCause::DivergentPrefix => "divergent prefix",
            ReplayMissCause::NonCacheable => "non-cacheable step",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("replay miss at step {step_index} ({cause})")]
    ReplayMiss {
        step_index: usize,
        cause: ReplayMissCause,
    },
    #[error("version mismatch: cache recorded with {stored}, running against {live}")]
    VersionMismatch {
        stored: Box<BackendDescriptor>,
        live: Box<BackendDescriptor>,
    },
    #[error("step {step_index}: {source}")]
    DeterminismViolation {
        step_index: usize,
        #[source]
        source: CacheError,
    },
    #[error("{0} mode needs a live backend")]
    MissingBackend(RunMode),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("backend failure at step {step_index}: {source}")]
    Backend {
        step_index: usize,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub rules: Vec<CacheabilityRule>,
    pub version_policy: VersionPolicy,
    pub slow_threshold_ms: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            version_policy: VersionPolicy::default(),
            slow_threshold_ms: DEFAULT_SLOW_THRESHOLD_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateStats {
    pub memory: CacheStats,
    pub memory_capacity: usize,
    pub occupancy: f64,
    pub store: StoreStats,
}

impl AggregateStats {
    pub fn flags(&self) -> &[CapacityFlag] {
        &self.memory.flags
    }
}

type WarningSink = Box<dyn Fn(&Warning) + Send + Sync>;

/// Shared by any number of concurrently running sessions.
pub struct Engine {
    store: Arc<CacheStore>,
    layer: Arc<MemLayer>,
    config: EngineConfig,
    clock: Arc<dyn Clock>,
    on_warning: Option<WarningSink>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("store", &self.store.path())
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

/// Per-run bookkeeping for one session.
struct Run<'a> {
    session: SessionContext,
    report: SessionReport,
    backend: Option<&'a mut dyn BackendAdapter>,
    live: Option<BackendDescriptor>,
    reference: Option<BackendDescriptor>,
    /// Steps of the trace the live backend has actually seen.
    synced: usize,
    version_warned: bool,
}

impl Engine {
    pub fn new(store: Arc<CacheStore>, layer: Arc<MemLayer>, config: EngineConfig) -> Self {
        Self {
            store,
            layer,
            config,
            clock: Arc::new(SystemClock::default()),
            on_warning: None,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Called for each warning the moment it is raised, before the live call
    /// it concerns.
    pub fn on_warning(mut self, sink: impl Fn(&Warning) + Send + Sync + 'static) -> Self {
        self.on_warning = Some(Box::new(sink));
        self
    }

    pub fn store(&self) -> &Arc<CacheStore> {
        &self.store
    }

    pub fn layer(&self) -> &Arc<MemLayer> {
        &self.layer
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn run_session(
        &self,
        script: &SessionScript,
        mode: RunMode,
        backend: Option<&mut dyn BackendAdapter>,
    ) -> Result<SessionReport, EngineError> {
        let started = self.clock.monotonic_ms();
        let backend = match (mode, backend) {
            (RunMode::Replay, _) => None,
            (_, Some(b)) => Some(b),
            (_, None) => return Err(EngineError::MissingBackend(mode)),
        };
        let mut run = Run {
            session: SessionContext::open(self.store.backend()),
            report: SessionReport {
                mode,
                steps: 0,
                hits: 0,
                misses: 0,
                backend_calls: 0,
                catchup_calls: 0,
                warnings: Vec::new(),
                outputs: Vec::with_capacity(script.len()),
                wall_ms: 0,
            },
            backend,
            live: None,
            reference: None,
            synced: 0,
            version_warned: false,
        };

        if let Some(b) = run.backend.as_deref_mut() {
            b.start().map_err(|source| EngineError::Backend {
                step_index: 0,
                source,
            })?;
            let live = b.describe().map_err(|source| EngineError::Backend {
                step_index: 0,
                source,
            })?;
            if let Some(expected) = &script.backend {
                self.version_gate(&mut run, expected, &live)?;
            }
            run.live = Some(live);
        }
        run.reference = run.live.clone().or_else(|| script.backend.clone());
        if let Some(reference) = run.reference.clone() {
            self.version_gate(&mut run, &self.store.backend(), &reference)?;
        }

        let result = script
            .inputs
            .iter()
            .enumerate()
            .try_for_each(|(k, input)| self.step(&mut run, mode, k, input));

        if let Some(b) = run.backend.as_deref_mut() {
            let reset = b.reset();
            if result.is_ok() {
                reset.map_err(|source| EngineError::Backend {
                    step_index: script.len(),
                    source,
                })?;
            }
        }
        result?;
        run.report.wall_ms = self.clock.monotonic_ms().saturating_sub(started);
        debug!(
            "{mode} session: {} steps, {} hits, {} live calls",
            run.report.steps, run.report.hits, run.report.backend_calls
        );
        Ok(run.report)
    }

    fn warn(&self, run: &mut Run<'_>, warning: Warning) {
        if let Some(sink) = &self.on_warning {
            sink(&warning);
        }
        run.report.warnings.push(warning);
    }

    /// Applies the version policy; warns at most once per session.
    fn version_gate(
        &self,
        run: &mut Run<'_>,
        stored: &BackendDescriptor,
        live: &BackendDescriptor,
    ) -> Result<(), EngineError> {
        match check_version(stored, live, self.config.version_policy) {
            VersionVerdict::Proceed => Ok(()),
            VersionVerdict::Abort => Err(EngineError::VersionMismatch {
                stored: Box::new(stored.clone()),
                live: Box::new(live.clone()),
            }),
            VersionVerdict::ProceedWithWarning => {
                if !run.version_warned {
                    run.version_warned = true;
                    self.warn(
                        run,
                        Warning::VersionMismatch {
                            stored: stored.clone(),
                            live: live.clone(),
                        },
                    );
                }
                Ok(())
            }
        }
    }

    fn cached(&self, key: &crate::cache::PrefixKey) -> Result<Option<CacheEntry>, EngineError> {
        if let Some(e) = self.layer.get(key) {
            return Ok(Some(e));
        }
        let found = self.store.lookup(key)?;
        if let Some(e) = &found {
            self.layer.put(e.clone());
        }
        Ok(found)
    }

    fn step(
        &self,
        run: &mut Run<'_>,
        mode: RunMode,
        k: usize,
        input: &InputAtom,
    ) -> Result<(), EngineError> {
        run.report.steps += 1;
        let verdict = classify(&self.config.rules, input);
        let key = run.session.next_key(input);

        if verdict == Verdict::NonCacheable {
            if mode == RunMode::Replay {
                return Err(EngineError::ReplayMiss {
                    step_index: k,
                    cause: ReplayMissCause::NonCacheable,
                });
            }
            self.warn(run, Warning::NonCacheableSkipped { step_index: k });
            let output = self.live_call(run, k, input)?;
            run.report.misses += 1;
            self.finish_step(run, input, output);
            return Ok(());
        }

        if mode != RunMode::Record {
            if let Some(entry) = self.cached(&key)? {
                if let Some(reference) = run.reference.clone() {
                    self.version_gate(run, &entry.backend, &reference)?;
                }
                run.report.hits += 1;
                self.finish_step(run, input, entry.output);
                return Ok(());
            }
            if mode == RunMode::Replay {
                return Err(EngineError::ReplayMiss {
                    step_index: k,
                    cause: ReplayMissCause::DivergentPrefix,
                });
            }
        }

        let output = self.live_call(run, k, input)?;
        let entry = CacheEntry::new(
            run.session.current_key(),
            input.clone(),
            output.clone(),
            run.live.clone().expect("live backend described"),
            self.clock.now(),
        );
        let outcome = self.store.insert(entry.clone()).map_err(|e| match e {
            StoreError::Cache(source @ CacheError::DeterminismViolation { .. }) => {
                EngineError::DeterminismViolation {
                    step_index: k,
                    source,
                }
            }
            other => EngineError::Store(other),
        })?;
        self.layer.put(entry);
        match outcome {
            InsertOutcome::AlreadyPresent => run.report.hits += 1,
            InsertOutcome::Inserted => run.report.misses += 1,
        }
        self.finish_step(run, input, output);
        Ok(())
    }

    fn finish_step(&self, run: &mut Run<'_>, input: &InputAtom, output: OutputRecord) {
        run.session.advance(input.clone(), output.clone());
        run.report.outputs.push(output);
    }

    /// Brings the live backend up to step `k`, then sends `input`.
    fn live_call(
        &self,
        run: &mut Run<'_>,
        k: usize,
        input: &InputAtom,
    ) -> Result<OutputRecord, EngineError> {
        let pending = run.synced..k;
        if !pending.is_empty() {
            let slow: Vec<usize> = pending
                .clone()
                .filter(|&j| run.session.trace()[j].1.elapsed_ms >= self.config.slow_threshold_ms)
                .collect();
            if !slow.is_empty() {
                let recorded_ms = slow
                    .iter()
                    .map(|&j| run.session.trace()[j].1.elapsed_ms)
                    .sum();
                self.warn(
                    run,
                    Warning::SlowQuery {
                        step_index: k,
                        slow_steps: slow,
                        recorded_ms,
                    },
                );
            }
        }
        let backend = run.backend.as_deref_mut().expect("live mode has a backend");
        let mut stale = None;
        for j in pending {
            let (cached_input, cached_output) = &run.session.trace()[j];
            let replayed = backend
                .send(cached_input)
                .map_err(|source| EngineError::Backend {
                    step_index: j,
                    source,
                })?;
            run.report.catchup_calls += 1;
            if stale.is_none() && !replayed.same_bytes(cached_output) {
                stale = Some(j);
            }
        }
        if let Some(step_index) = stale {
            self.warn(run, Warning::StaleEntry { step_index });
        }
        let backend = run.backend.as_deref_mut().expect("live mode has a backend");
        let output = backend.send(input).map_err(|source| EngineError::Backend {
            step_index: k,
            source,
        })?;
        run.report.backend_calls += 1;
        run.synced = k + 1;
        Ok(output)
    }

    pub fn aggregate_stats(&self) -> Result<AggregateStats, EngineError> {
        Ok(AggregateStats {
            memory: self.layer.stats(),
            memory_capacity: self.layer.config().capacity_entries,
            occupancy: self.layer.occupancy(),
            store: self.store.stats()?,
        })
    }
}
