//! Record/replay memoization for stateful black-box tools.
//!
//! Interactions with an external tool are grouped into independent sessions
//! (evaluation cycles). Each step is keyed by a SHA-256 chain over every
//! input sent so far, stored durably with provenance metadata, and can later
//! be served without the tool running at all.

pub mod backend;
pub mod cache;
mod canon;
pub mod cli;
pub mod descriptor;
pub mod engine;
pub mod memlayer;
pub mod persist;

pub use descriptor::BackendDescriptor;
