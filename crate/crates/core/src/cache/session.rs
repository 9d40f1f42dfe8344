use crate::cache::key::{derive_key, session_root, InputAtom, OutputRecord, PrefixKey};
use crate::descriptor::BackendDescriptor;

/// One evaluation cycle: the key chain and the trace of steps taken so far.
///
/// Owned by a single thread of control; it is `Send` so it can move between
/// threads between steps.
#[derive(Debug, Clone)]
pub struct SessionContext {
    backend: BackendDescriptor,
    root: PrefixKey,
    current_key: PrefixKey,
    trace: Vec<(InputAtom, OutputRecord)>,
}

impl SessionContext {
    pub fn open(backend: BackendDescriptor) -> Self {
        let root = session_root(&backend);
        Self {
            backend,
            root,
            current_key: root,
            trace: Vec::new(),
        }
    }

    pub fn backend(&self) -> &BackendDescriptor {
        &self.backend
    }

    pub fn root(&self) -> PrefixKey {
        self.root
    }

    pub fn current_key(&self) -> PrefixKey {
        self.current_key
    }

    /// 0-based index of the next step, equal to the number of steps taken.
    pub fn step_index(&self) -> usize {
        self.trace.len()
    }

    pub fn trace(&self) -> &[(InputAtom, OutputRecord)] {
        &self.trace
    }

    /// Key the next step would get if `input` were sent.
    pub fn next_key(&self, input: &InputAtom) -> PrefixKey {
        derive_key(&self.current_key, input)
    }

    /// Appends a step and moves the chain forward. Returns the new key.
    pub fn advance(&mut self, input: InputAtom, output: OutputRecord) -> PrefixKey {
        self.current_key = derive_key(&self.current_key, &input);
        self.trace.push((input, output));
        self.current_key
    }

    /// Keys of every step, recomputed from the root.
    pub fn replay_keys(&self) -> Vec<PrefixKey> {
        crate::cache::key::key_chain(self.root, self.trace.iter().map(|(i, _)| i))
    }
}
