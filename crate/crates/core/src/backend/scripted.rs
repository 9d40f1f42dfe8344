//! Deterministic stand-in for a stateful tool.
//!
//! Commands: `set <var> <int>`, `add <var> <int>`, `get <var>`,
//! `sleep <ms>`, `rand`, `reset`. Anything else answers `err:unknown`.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::backend::{BackendAdapter, BackendError};
use crate::cache::{InputAtom, OutputRecord};
use crate::descriptor::BackendDescriptor;

pub const SCRIPTED_NAME: &str = "scripted";
pub const SCRIPTED_VERSION: &str = "1.0";
pub const MAX_SLEEP_MS: u64 = 10_000;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptedState {
    pub variables: HashMap<String, i64>,
    pub injected_latency_ms: u64,
}

impl ScriptedState {
    pub fn with_latency(injected_latency_ms: u64) -> Self {
        Self {
            variables: HashMap::new(),
            injected_latency_ms,
        }
    }
}

/// Evaluates one command against `state`. Latency injection is the caller's
/// job; `sleep` blocks here.
pub fn scripted_eval(state: &mut ScriptedState, input: &InputAtom) -> Vec<u8> {
    const UNKNOWN: &[u8] = b"err:unknown";
    let Ok(text) = std::str::from_utf8(input.as_bytes()) else {
        return UNKNOWN.to_vec();
    };
    let words: Vec<&str> = text.split_whitespace().collect();
    match words.as_slice() {
        ["set", var, value] => match value.parse::<i64>() {
            Ok(v) => {
                state.variables.insert((*var).to_string(), v);
                b"ok".to_vec()
            }
            Err(_) => UNKNOWN.to_vec(),
        },
        ["add", var, value] => match value.parse::<i64>() {
            Ok(v) => {
                let slot = state.variables.entry((*var).to_string()).or_insert(0);
                *slot = slot.wrapping_add(v);
                slot.to_string().into_bytes()
            }
            Err(_) => UNKNOWN.to_vec(),
        },
        ["get", var] => match state.variables.get(*var) {
            Some(v) => v.to_string().into_bytes(),
            None => b"undef".to_vec(),
        },
        ["sleep", ms] => match ms.parse::<u64>() {
            Ok(ms) => {
                std::thread::sleep(Duration::from_millis(ms.min(MAX_SLEEP_MS)));
                b"ok".to_vec()
            }
            Err(_) => UNKNOWN.to_vec(),
        },
        ["rand"] => rand::thread_rng().gen::<u64>().to_string().into_bytes(),
        ["reset"] => {
            state.variables.clear();
            b"ok".to_vec()
        }
        _ => UNKNOWN.to_vec(),
    }
}

/// In-process adapter over [`scripted_eval`].
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    state: ScriptedState,
    calls: u64,
}

impl ScriptedBackend {
    pub fn new(injected_latency_ms: u64) -> Self {
        Self {
            state: ScriptedState::with_latency(injected_latency_ms),
            calls: 0,
        }
    }

    pub fn state(&self) -> &ScriptedState {
        &self.state
    }

    /// Number of `send` calls served since construction.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn descriptor(injected_latency_ms: u64) -> BackendDescriptor {
        BackendDescriptor::new(
            SCRIPTED_NAME,
            SCRIPTED_VERSION,
            format!("latency_ms={injected_latency_ms}"),
        )
    }
}

impl BackendAdapter for ScriptedBackend {
    fn start(&mut self) -> Result<(), BackendError> {
        Ok(())
    }

    fn send(&mut self, input: &InputAtom) -> Result<OutputRecord, BackendError> {
        let started = Instant::now();
        let bytes = scripted_eval(&mut self.state, input);
        if self.state.injected_latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.state.injected_latency_ms));
        }
        self.calls += 1;
        Ok(OutputRecord::new(
            bytes,
            started.elapsed().as_millis() as u64,
        ))
    }

    fn reset(&mut self) -> Result<(), BackendError> {
        self.state.variables.clear();
        Ok(())
    }

    fn describe(&self) -> Result<BackendDescriptor, BackendError> {
        Ok(Self::descriptor(self.state.injected_latency_ms))
    }

    fn shutdown(&mut self) -> Result<(), BackendError> {
        self.state.variables.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(state: &mut ScriptedState, input: &str) -> String {
        String::from_utf8(scripted_eval(state, &input.into())).unwrap()
    }

    #[test]
    fn set_add_get() {
        let mut s = ScriptedState::default();
        assert_eq!(run(&mut s, "set x 5"), "ok");
        assert_eq!(run(&mut s, "add x 3"), "8");
        assert_eq!(run(&mut s, "get x"), "8");
    }

    #[test]
    fn unset_is_undef_and_add_starts_at_zero() {
        let mut s = ScriptedState::default();
        assert_eq!(run(&mut s, "get y"), "undef");
        assert_eq!(run(&mut s, "add y -4"), "-4");
    }

    #[test]
    fn reset_clears() {
        let mut s = ScriptedState::default();
        run(&mut s, "set x 1");
        assert_eq!(run(&mut s, "reset"), "ok");
        assert_eq!(run(&mut s, "get x"), "undef");
    }

    #[test]
    fn unknown_and_malformed_commands() {
        let mut s = ScriptedState::default();
        for bad in [
            "",
            "frobnicate",
            "set x",
            "set x five",
            "get",
            "sleep -1",
            "rand 3",
        ] {
            assert_eq!(run(&mut s, bad), "err:unknown", "{bad:?}");
        }
        assert_eq!(
            scripted_eval(&mut s, &InputAtom::new(vec![0xff, 0xfe])),
            b"err:unknown"
        );
    }

    #[test]
    fn sleep_blocks() {
        let mut s = ScriptedState::default();
        let t = Instant::now();
        assert_eq!(run(&mut s, "sleep 20"), "ok");
        assert!(t.elapsed() >= Duration::from_millis(20));
    }

    #[test]
    fn rand_varies() {
        let mut s = ScriptedState::default();
        let draws: std::collections::HashSet<String> =
            (0..8).map(|_| run(&mut s, "rand")).collect();
        assert!(draws.len() > 1);
    }

    #[test]
    fn adapter_describes_itself_and_injects_latency() {
        let mut b = ScriptedBackend::new(15);
        let d = b.describe().unwrap();
        assert_eq!(
            d,
            BackendDescriptor::new("scripted", "1.0", "latency_ms=15")
        );
        assert_eq!(b.describe().unwrap(), d);
        let out = b.send(&"set x 1".into()).unwrap();
        assert_eq!(out.bytes, b"ok");
        assert!(out.elapsed_ms >= 15);
        assert_eq!(b.calls(), 1);
    }
}
