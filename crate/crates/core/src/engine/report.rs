use std::fmt::{self, Write as _};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::Serialize;

use crate::cache::OutputRecord;
use crate::descriptor::BackendDescriptor;
use crate::engine::RunMode;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    /// A live call is about to re-run cached steps that were slow when
    /// recorded.
    SlowQuery {
        step_index: usize,
        slow_steps: Vec<usize>,
        recorded_ms: u64,
    },
    VersionMismatch {
        stored: BackendDescriptor,
        live: BackendDescriptor,
    },
    NonCacheableSkipped {
        step_index: usize,
    },
    /// Re-running a cached step on the live backend gave different output.
    StaleEntry {
        step_index: usize,
    },
}

impl Warning {
    pub fn kind(&self) -> &'static str {
        match self {
            Warning::SlowQuery { .. } => "slow-query",
            Warning::VersionMismatch { .. } => "version-mismatch",
            Warning::NonCacheableSkipped { .. } => "non-cacheable-skipped",
            Warning::StaleEntry { .. } => "stale-entry",
        }
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::SlowQuery {
                step_index,
                slow_steps,
                recorded_ms,
            } => write!(
                f,
                "slow-query: step {step_index} needs a live call that first re-runs cached steps {slow_steps:?}, recorded at {recorded_ms} ms"
            ),
            Warning::VersionMismatch { stored, live } => {
                write!(f, "version-mismatch: cache recorded with {stored}, running against {live}")
            }
            Warning::NonCacheableSkipped { step_index } => {
                write!(f, "non-cacheable-skipped: step {step_index} was not cached")
            }
            Warning::StaleEntry { step_index } => write!(
                f,
                "stale-entry: live backend no longer reproduces cached step {step_index}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionReport {
    pub mode: RunMode,
    pub steps: usize,
    pub hits: usize,
    pub misses: usize,
    /// Live calls that produced a step's answer.
    pub backend_calls: usize,
    /// Live calls that only replayed cached steps to bring the backend's
    /// state up to date before a miss.
    pub catchup_calls: usize,
    pub warnings: Vec<Warning>,
    pub outputs: Vec<OutputRecord>,
    pub wall_ms: u64,
}

fn escape(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).escape_debug().to_string()
}

impl SessionReport {
    /// Human-readable rendering. Depends only on the report's content.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}", self.mode);
        let _ = writeln!(s, "steps: {}", self.steps);
        let _ = writeln!(s, "hits: {}", self.hits);
        let _ = writeln!(s, "misses: {}", self.misses);
        let _ = writeln!(s, "backend_calls: {}", self.backend_calls);
        let _ = writeln!(s, "catchup_calls: {}", self.catchup_calls);
        let _ = writeln!(s, "wall_ms: {}", self.wall_ms);
        let _ = writeln!(s, "outputs:");
        for (i, o) in self.outputs.iter().enumerate() {
            let _ = writeln!(s, "  [{i}] {} ({} ms)", escape(&o.bytes), o.elapsed_ms);
        }
        let _ = writeln!(s, "warnings: {}", self.warnings.len());
        for w in &self.warnings {
            let _ = writeln!(s, "  {w}");
        }
        s
    }

    /// Machine-readable rendering (JSON, one object).
    pub fn render_json(&self) -> String {
        #[derive(Serialize)]
        struct Output<'a> {
            output_b64: String,
            output_text: std::borrow::Cow<'a, str>,
            elapsed_ms: u64,
        }
        #[derive(Serialize)]
        struct WarningDoc {
            kind: &'static str,
            message: String,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            mode: String,
            steps: usize,
            hits: usize,
            misses: usize,
            backend_calls: usize,
            catchup_calls: usize,
            wall_ms: u64,
            outputs: Vec<Output<'a>>,
            warnings: Vec<WarningDoc>,
        }
        let doc = Doc {
            mode: self.mode.to_string(),
            steps: self.steps,
            hits: self.hits,
            misses: self.misses,
            backend_calls: self.backend_calls,
            catchup_calls: self.catchup_calls,
            wall_ms: self.wall_ms,
            outputs: self
                .outputs
                .iter()
                .map(|o| Output {
                    output_b64: B64.encode(&o.bytes),
                    output_text: String::from_utf8_lossy(&o.bytes),
                    elapsed_ms: o.elapsed_ms,
                })
                .collect(),
            warnings: self
                .warnings
                .iter()
                .map(|w| WarningDoc {
                    kind: w.kind(),
                    message: w.to_string(),
                })
                .collect(),
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("report serializes");
        out.push('\n');
        out
    }
}
