use std::fmt;

use crate::engine::EngineError;
use crate::persist::StoreError;

/// Process exit statuses. These numbers are a stable contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExitCode {
    Success = 0,
    ReplayMiss = 1,
    Integrity = 2,
    VersionMismatch = 3,
    Usage = 4,
    Backend = 5,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// A failed command: what to print and how to exit.
#[derive(Debug)]
pub struct CliError {
    pub exit: ExitCode,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            exit: ExitCode::Usage,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn store_exit(e: &StoreError) -> ExitCode {
    match e {
        StoreError::AlreadyExists(_)
        | StoreError::NotFound(_)
        | StoreError::Locked(_)
        | StoreError::ReadOnly
        | StoreError::Closed => ExitCode::Usage,
        StoreError::FormatMismatch { .. }
        | StoreError::CorruptHeader(_)
        | StoreError::Corrupt { .. }
        | StoreError::Cache(_)
        | StoreError::Io { .. } => ExitCode::Integrity,
    }
}

pub fn engine_exit(e: &EngineError) -> ExitCode {
    match e {
        EngineError::ReplayMiss { .. } => ExitCode::ReplayMiss,
        EngineError::VersionMismatch { .. } => ExitCode::VersionMismatch,
        EngineError::DeterminismViolation { .. } => ExitCode::Integrity,
        EngineError::MissingBackend(_) => ExitCode::Usage,
        EngineError::Store(s) => store_exit(s),
        EngineError::Backend { .. } => ExitCode::Backend,
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        Self {
            exit: store_exit(&e),
            message: e.to_string(),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let mut message = e.to_string();
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            message.push_str(&format!(": {s}"));
            source = s.source();
        }
        Self {
            exit: engine_exit(&e),
            message,
        }
    }
}
