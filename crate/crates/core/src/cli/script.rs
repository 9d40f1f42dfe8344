//! Session script files: one input per line.
//!
//! ```text
//! # comment
//! @backend scripted 1.0 latency_ms=0
//! set x 1
//! get x
//! ```

use crate::descriptor::BackendDescriptor;
use crate::engine::SessionScript;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("script line {line}: {reason}")]
pub struct ScriptError {
    /// 1-based.
    pub line: usize,
    pub reason: String,
}

/// Parses script text. Lines are taken verbatim apart from a trailing `\r`;
/// whitespace-only lines count as blank.
pub fn parse_script(text: &str) -> Result<SessionScript, ScriptError> {
    let mut script = SessionScript::default();
    for (n, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let err = |reason: &str| ScriptError {
            line: n + 1,
            reason: reason.to_string(),
        };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("@backend") {
            if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
                return Err(err("unknown directive"));
            }
            if script.backend.is_some() {
                return Err(err("second @backend directive"));
            }
            if !script.inputs.is_empty() {
                return Err(err("@backend must come before the first input"));
            }
            let mut parts = rest.split_whitespace();
            let (Some(name), Some(version)) = (parts.next(), parts.next()) else {
                return Err(err("expected @backend <name> <version> [<fingerprint>]"));
            };
            let fingerprint = parts.next().unwrap_or("");
            if parts.next().is_some() {
                return Err(err("too many fields in @backend"));
            }
            script.backend = Some(BackendDescriptor::new(name, version, fingerprint));
            continue;
        }
        script.inputs.push(line.into());
    }
    Ok(script)
}
