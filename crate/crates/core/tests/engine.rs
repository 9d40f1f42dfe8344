use std::sync::{Arc, Mutex};

use replaycache::backend::{BackendAdapter, BackendError, ScriptedBackend};
use replaycache::cache::{
    CacheabilityRule, FixedClock, InputAtom, OutputRecord, Timestamp, Verdict,
};
use replaycache::engine::{
    Engine, EngineConfig, EngineError, ReplayMissCause, RunMode, SessionScript, VersionPolicy,
    Warning,
};
use replaycache::memlayer::{FlagKind, LruConfig, MemLayer};
use replaycache::persist::CacheStore;
use replaycache::BackendDescriptor;

fn engine_with(config: EngineConfig, capacity: usize) -> Engine {
    let store = Arc::new(CacheStore::ephemeral(&ScriptedBackend::descriptor(0)));
    Engine::new(
        store,
        Arc::new(MemLayer::new(LruConfig::with_capacity(capacity))),
        config,
    )
}

fn engine() -> Engine {
    engine_with(EngineConfig::default(), 64)
}

fn texts(outputs: &[OutputRecord]) -> Vec<String> {
    outputs.iter().map(|o| o.preview()).collect()
}

/// Runs `script` straight on a fresh backend, no cache.
fn direct(script: &[&str]) -> Vec<String> {
    let mut b = ScriptedBackend::new(0);
    script
        .iter()
        .map(|s| b.send(&InputAtom::from(*s)).unwrap().preview())
        .collect()
}

#[test]
fn replay_reproduces_recording_without_backend() {
    let e = engine();
    let script = SessionScript::new(["set x 1", "get x"]);
    let mut b = ScriptedBackend::new(0);
    let rec = e
        .run_session(&script, RunMode::Record, Some(&mut b))
        .unwrap();
    assert_eq!((rec.steps, rec.backend_calls), (2, 2));
    let rep = e.run_session(&script, RunMode::Replay, None).unwrap();
    assert_eq!((rep.hits, rep.misses, rep.backend_calls), (2, 0, 0));
    assert_eq!(rep.outputs, rec.outputs);
    assert_eq!(texts(&rep.outputs), ["ok", "1"]);
}

#[test]
fn replay_of_divergent_script_misses_at_first_difference() {
    let e = engine();
    e.run_session(
        &SessionScript::new(["set x 1", "get x"]),
        RunMode::Record,
        Some(&mut ScriptedBackend::new(0)),
    )
    .unwrap();
    let err = e
        .run_session(
            &SessionScript::new(["set x 2", "get x"]),
            RunMode::Replay,
            None,
        )
        .unwrap_err();
    assert!(matches!(
        err,
        EngineError::ReplayMiss {
            step_index: 0,
            cause: ReplayMissCause::DivergentPrefix
        }
    ));
    // "get x" after a different first step is a different key
    let err = e
        .run_session(
            &SessionScript::new(["set x 1", "set x 2", "get x"]),
            RunMode::Replay,
            None,
        )
        .unwrap_err();
    assert!(matches!(err, EngineError::ReplayMiss { step_index: 1, .. }));
}

#[test]
fn hybrid_second_run_is_all_hits() {
    let e = engine();
    let script = SessionScript::new(["set x 4", "add x 1", "get x"]);
    let mut b = ScriptedBackend::new(0);
    let first = e
        .run_session(&script, RunMode::Hybrid, Some(&mut b))
        .unwrap();
    assert_eq!((first.misses, first.hits, first.backend_calls), (3, 0, 3));
    let second = e
        .run_session(&script, RunMode::Hybrid, Some(&mut b))
        .unwrap();
    assert_eq!(
        (second.hits, second.misses, second.backend_calls),
        (3, 0, 0)
    );
    assert_eq!(second.outputs, first.outputs);
    assert_eq!(b.calls(), 3);
}

#[test]
fn missing_backend_is_an_error_outside_replay() {
    let e = engine();
    let s = SessionScript::new(["get x"]);
    assert!(matches!(
        e.run_session(&s, RunMode::Record, None),
        Err(EngineError::MissingBackend(RunMode::Record))
    ));
    assert!(matches!(
        e.run_session(&s, RunMode::Hybrid, None),
        Err(EngineError::MissingBackend(RunMode::Hybrid))
    ));
}

#[test]
fn hybrid_miss_after_hits_restores_backend_state_first() {
    let e = engine();
    let mut b = ScriptedBackend::new(0);
    e.run_session(
        &SessionScript::new(["set x 1", "add x 2", "get x"]),
        RunMode::Record,
        Some(&mut b),
    )
    .unwrap();
    let script = ["set x 1", "add x 2", "add x 5", "get x"];
    let r = e
        .run_session(&SessionScript::new(script), RunMode::Hybrid, Some(&mut b))
        .unwrap();
    assert_eq!(texts(&r.outputs), direct(&script));
    assert_eq!(
        (r.hits, r.misses, r.backend_calls, r.catchup_calls),
        (2, 2, 2, 2)
    );
}

#[test]
fn non_cacheable_steps_go_live_and_are_never_stored() {
    let rules = vec![CacheabilityRule::prefix("rand", Verdict::NonCacheable)];
    let e = engine_with(
        EngineConfig {
            rules,
            ..EngineConfig::default()
        },
        64,
    );
    let script = SessionScript::new(["set x 3", "rand", "get x"]);
    let mut b = ScriptedBackend::new(0);
    let first = e
        .run_session(&script, RunMode::Hybrid, Some(&mut b))
        .unwrap();
    assert_eq!(e.store().entry_count().unwrap(), 2);
    assert!(e
        .store()
        .records()
        .unwrap()
        .iter()
        .all(|r| r.input.as_bytes() != b"rand"));
    assert!(first
        .warnings
        .contains(&Warning::NonCacheableSkipped { step_index: 1 }));

    // the chain still includes "rand": the step after it hits on rerun
    let second = e
        .run_session(&script, RunMode::Hybrid, Some(&mut b))
        .unwrap();
    assert_eq!(
        (second.hits, second.misses, second.backend_calls),
        (2, 1, 1)
    );
    assert_eq!(texts(&second.outputs)[2], "3");

    let err = e.run_session(&script, RunMode::Replay, None).unwrap_err();
    assert!(matches!(
        err,
        EngineError::ReplayMiss {
            step_index: 1,
            cause: ReplayMissCause::NonCacheable
        }
    ));
}

#[test]
fn strict_policy_aborts_on_version_change() {
    let store = Arc::new(CacheStore::ephemeral(&BackendDescriptor::new(
        "scripted",
        "0.9",
        "latency_ms=0",
    )));
    let e = Engine::new(
        store,
        Arc::new(MemLayer::new(LruConfig::default())),
        EngineConfig {
            version_policy: VersionPolicy::Strict,
            ..EngineConfig::default()
        },
    );
    let err = e
        .run_session(
            &SessionScript::new(["get x"]),
            RunMode::Hybrid,
            Some(&mut ScriptedBackend::new(0)),
        )
        .unwrap_err();
    assert!(matches!(err, EngineError::VersionMismatch { .. }));
    assert_eq!(e.store().entry_count().unwrap(), 0);
}

#[test]
fn warn_policy_replays_stale_cache_with_one_warning() {
    let e = engine();
    let script = SessionScript::new(["set x 1", "add x 1", "get x"]);
    e.run_session(&script, RunMode::Record, Some(&mut ScriptedBackend::new(0)))
        .unwrap();
    let upgraded =
        script
            .clone()
            .expecting(BackendDescriptor::new("scripted", "2.0", "latency_ms=0"));
    let r = e.run_session(&upgraded, RunMode::Replay, None).unwrap();
    assert_eq!(r.hits, 3);
    let version_warnings = r
        .warnings
        .iter()
        .filter(|w| matches!(w, Warning::VersionMismatch { .. }))
        .count();
    assert_eq!(version_warnings, 1);
}

/// Scripted backend whose answers to one command changed, as after an
/// upgrade that kept the version string.
struct Drifted {
    inner: ScriptedBackend,
    changed: &'static str,
}

impl BackendAdapter for Drifted {
    fn start(&mut self) -> Result<(), BackendError> {
        self.inner.start()
    }
    fn send(&mut self, input: &InputAtom) -> Result<OutputRecord, BackendError> {
        let mut out = self.inner.send(input)?;
        if input.as_bytes() == self.changed.as_bytes() {
            out.bytes.extend_from_slice(b".0");
        }
        Ok(out)
    }
    fn reset(&mut self) -> Result<(), BackendError> {
        self.inner.reset()
    }
    fn describe(&self) -> Result<BackendDescriptor, BackendError> {
        self.inner.describe()
    }
    fn shutdown(&mut self) -> Result<(), BackendError> {
        self.inner.shutdown()
    }
}

#[test]
fn rerecording_changed_output_is_a_determinism_violation() {
    let e = engine();
    let script = SessionScript::new(["set x 1", "add x 1", "get x"]);
    e.run_session(&script, RunMode::Record, Some(&mut ScriptedBackend::new(0)))
        .unwrap();
    let before = e.store().records().unwrap();
    let mut drifted = Drifted {
        inner: ScriptedBackend::new(0),
        changed: "get x",
    };
    let err = e
        .run_session(&script, RunMode::Record, Some(&mut drifted))
        .unwrap_err();
    assert!(matches!(
        err,
        EngineError::DeterminismViolation { step_index: 2, .. }
    ));
    assert_eq!(e.store().records().unwrap(), before);
    assert!(e.store().verify().unwrap().is_clean());
}

#[test]
fn catch_up_notices_stale_entries() {
    let e = engine();
    e.run_session(
        &SessionScript::new(["set x 1", "get x"]),
        RunMode::Record,
        Some(&mut ScriptedBackend::new(0)),
    )
    .unwrap();
    let mut drifted = Drifted {
        inner: ScriptedBackend::new(0),
        changed: "get x",
    };
    let r = e
        .run_session(
            &SessionScript::new(["set x 1", "get x", "add x 1"]),
            RunMode::Hybrid,
            Some(&mut drifted),
        )
        .unwrap();
    assert!(r.warnings.contains(&Warning::StaleEntry { step_index: 1 }));
}

/// Logs every live send next to every warning so ordering can be checked.
struct Logged {
    inner: ScriptedBackend,
    log: Arc<Mutex<Vec<String>>>,
}

impl BackendAdapter for Logged {
    fn start(&mut self) -> Result<(), BackendError> {
        self.inner.start()
    }
    fn send(&mut self, input: &InputAtom) -> Result<OutputRecord, BackendError> {
        self.log
            .lock()
            .unwrap()
            .push(format!("send {}", input.preview()));
        self.inner.send(input)
    }
    fn reset(&mut self) -> Result<(), BackendError> {
        self.inner.reset()
    }
    fn describe(&self) -> Result<BackendDescriptor, BackendError> {
        self.inner.describe()
    }
    fn shutdown(&mut self) -> Result<(), BackendError> {
        self.inner.shutdown()
    }
}

#[test]
fn slow_query_warning_precedes_live_recomputation() {
    let log = Arc::new(Mutex::new(Vec::new()));
    let sink_log = Arc::clone(&log);
    let e = engine_with(
        EngineConfig {
            slow_threshold_ms: 40,
            ..EngineConfig::default()
        },
        64,
    )
    .on_warning(move |w| sink_log.lock().unwrap().push(format!("warn {}", w.kind())));
    let mut b = Logged {
        inner: ScriptedBackend::new(0),
        log: Arc::clone(&log),
    };
    e.run_session(
        &SessionScript::new(["set x 1", "sleep 50", "get x"]),
        RunMode::Record,
        Some(&mut b),
    )
    .unwrap();
    log.lock().unwrap().clear();

    let r = e
        .run_session(
            &SessionScript::new(["set x 1", "sleep 50", "add x 1"]),
            RunMode::Hybrid,
            Some(&mut b),
        )
        .unwrap();
    assert_eq!(
        *log.lock().unwrap(),
        [
            "warn slow-query",
            "send set x 1",
            "send sleep 50",
            "send add x 1"
        ]
    );
    assert!(matches!(
        &r.warnings[0],
        Warning::SlowQuery { step_index: 2, slow_steps, .. } if slow_steps == &vec![1]
    ));

    // a full hit never warns
    log.lock().unwrap().clear();
    let r = e
        .run_session(
            &SessionScript::new(["set x 1", "sleep 50", "get x"]),
            RunMode::Hybrid,
            Some(&mut b),
        )
        .unwrap();
    assert!(r.warnings.is_empty());
    assert!(log.lock().unwrap().is_empty());
}

const ALPHABET: [&str; 3] = ["set x 1", "add x 2", "get x"];

fn all_scripts(max_len: usize) -> Vec<Vec<&'static str>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in ALPHABET {
                let mut t: Vec<&'static str> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Record A, then hybrid-run B: exactly the common prefix hits, everything
/// after it is live, and B's outputs match a cache-free run.
#[test]
fn prefix_reuse_accounting_brute_force() {
    let scripts = all_scripts(4);
    assert_eq!(scripts.len(), 121);
    for a in &scripts {
        for b in &scripts {
            let e = engine();
            let mut backend = ScriptedBackend::new(0);
            e.run_session(
                &SessionScript::new(a.iter().copied()),
                RunMode::Record,
                Some(&mut backend),
            )
            .unwrap();
            let r = e
                .run_session(
                    &SessionScript::new(b.iter().copied()),
                    RunMode::Hybrid,
                    Some(&mut backend),
                )
                .unwrap();
            let p = a.iter().zip(b).take_while(|(x, y)| x == y).count();
            assert_eq!((r.hits, r.misses), (p, b.len() - p), "A={a:?} B={b:?}");
            assert_eq!(r.steps, r.hits + r.misses);
            assert_eq!(r.backend_calls, r.misses);
            assert_eq!(texts(&r.outputs), direct(b), "A={a:?} B={b:?}");
        }
    }
}

#[test]
fn concurrent_sessions_match_sequential_runs() {
    let e = Arc::new(engine_with(EngineConfig::default(), 8));
    let scripts: Vec<Vec<String>> = (0..16)
        .map(|t| {
            (0..6)
                .map(|i| match i % 3 {
                    0 => format!("set v{} {}", t % 4, i),
                    1 => format!("add v{} {}", t % 4, t % 3),
                    _ => format!("get v{}", t % 4),
                })
                .collect()
        })
        .collect();
    let handles: Vec<_> = scripts
        .iter()
        .cloned()
        .map(|s| {
            let e = Arc::clone(&e);
            std::thread::spawn(move || {
                let mut b = ScriptedBackend::new(0);
                let script = SessionScript::new(s.iter().map(String::as_str));
                let r = e
                    .run_session(&script, RunMode::Hybrid, Some(&mut b))
                    .unwrap();
                texts(&r.outputs)
            })
        })
        .collect();
    for (h, s) in handles.into_iter().zip(&scripts) {
        let refs: Vec<&str> = s.iter().map(String::as_str).collect();
        assert_eq!(h.join().unwrap(), direct(&refs));
    }
    assert!(e.store().verify().unwrap().is_clean());
}

#[test]
fn aggregate_stats_track_runs_and_flags() {
    let e = engine_with(EngineConfig::default(), 10);
    let fresh = e.aggregate_stats().unwrap();
    assert_eq!(fresh.memory.lookups(), 0);
    assert_eq!(fresh.store.records, 0);
    assert!(fresh.flags().is_empty());

    let script = SessionScript::new(["set x 1", "add x 1", "add x 1", "get x"]);
    let mut b = ScriptedBackend::new(0);
    e.run_session(&script, RunMode::Hybrid, Some(&mut b))
        .unwrap();
    e.run_session(&script, RunMode::Hybrid, Some(&mut b))
        .unwrap();
    let s = e.aggregate_stats().unwrap();
    assert_eq!(s.store.records, 4);
    assert!(s.memory.hits >= 4);

    let long: Vec<String> = (0..12).map(|i| format!("set y {i}")).collect();
    e.run_session(
        &SessionScript::new(long.iter().map(String::as_str)),
        RunMode::Hybrid,
        Some(&mut b),
    )
    .unwrap();
    let s = e.aggregate_stats().unwrap();
    assert!(s.flags().iter().any(|f| f.kind == FlagKind::NearCapacity));
    assert!(s.flags().iter().any(|f| f.kind == FlagKind::AtCapacity));
    assert_eq!(s.occupancy, 1.0);
}

#[test]
fn rendered_report_is_stable() {
    let store = Arc::new(CacheStore::ephemeral(&ScriptedBackend::descriptor(0)));
    let clock = Arc::new(FixedClock(Timestamp::from_millis(1_760_000_000_000)));
    let e = Engine::new(
        store,
        Arc::new(MemLayer::new(LruConfig::default())),
        EngineConfig::default(),
    )
    .with_clock(clock);
    let script = SessionScript::new(["set x 1", "get x"]);
    e.run_session(&script, RunMode::Record, Some(&mut ScriptedBackend::new(0)))
        .unwrap();
    let first = e.run_session(&script, RunMode::Replay, None).unwrap();
    let second = e.run_session(&script, RunMode::Replay, None).unwrap();
    assert_eq!(first.render_text(), second.render_text());
    assert_eq!(first.render_json(), second.render_json());
    let elapsed: Vec<u64> = first.outputs.iter().map(|o| o.elapsed_ms).collect();
    let expected = format!(
        "mode: replay\nsteps: 2\nhits: 2\nmisses: 0\nbackend_calls: 0\ncatchup_calls: 0\nwall_ms: 0\noutputs:\n  [0] ok ({} ms)\n  [1] 1 ({} ms)\nwarnings: 0\n",
        elapsed[0], elapsed[1]
    );
    assert_eq!(first.render_text(), expected);
}
