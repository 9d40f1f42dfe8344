//! Live black-box tools.
//!
//! The rest of the crate sees a backend only through [`BackendAdapter`]:
//! send one input, get one output, reset to a fresh state, describe yourself.

pub mod scripted;
pub mod subprocess;

pub use crate::descriptor::BackendDescriptor;
pub use scripted::{scripted_eval, ScriptedBackend, ScriptedState};
pub use subprocess::{SubprocessBackend, SubprocessConfig, DEFAULT_SENTINEL, DEFAULT_TIMEOUT_MS};

use crate::cache::{InputAtom, OutputRecord};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend is not running: {0}")]
    Dead(String),
    #[error("backend did not answer within {0} ms")]
    Timeout(u64),
    #[error("input contains a newline, which the line protocol cannot frame")]
    Framing,
    #[error("could not launch {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
}

/// Contract for a live tool. One instance serves one session at a time and
/// every call on it is sequential.
pub trait BackendAdapter: Send {
    fn start(&mut self) -> Result<(), BackendError>;

    /// Sends one input and returns the tool's answer, timed.
    fn send(&mut self, input: &InputAtom) -> Result<OutputRecord, BackendError>;

    /// Returns the tool to its freshly started state.
    fn reset(&mut self) -> Result<(), BackendError>;

    fn describe(&self) -> Result<BackendDescriptor, BackendError>;

    fn shutdown(&mut self) -> Result<(), BackendError>;
}

impl<T: BackendAdapter + ?Sized> BackendAdapter for Box<T> {
    fn start(&mut self) -> Result<(), BackendError> {
        (**self).start()
    }

    fn send(&mut self, input: &InputAtom) -> Result<OutputRecord, BackendError> {
        (**self).send(input)
    }

    fn reset(&mut self) -> Result<(), BackendError> {
        (**self).reset()
    }

    fn describe(&self) -> Result<BackendDescriptor, BackendError> {
        (**self).describe()
    }

    fn shutdown(&mut self) -> Result<(), BackendError> {
        (**self).shutdown()
    }
}
