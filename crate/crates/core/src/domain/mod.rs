//! Shared domain types, validation rules and lifecycle state machines.
//!
//! Everything here is a plain value: cheap to clone, `Send`, and encoded on
//! the wire as snake_case JSON with enums tagged by a `kind` field.

mod checkpoint;
mod ids;
mod job;
mod node;
mod validate;

use std::fmt::Debug;

pub use checkpoint::{resolve_chain, CheckpointManifest, InterruptionEvent, InterruptionKind};
pub use ids::{JobId, NodeId, ParseNodeIdError};
pub use job::{
    AffinityTag, Allocation, CheckpointMode, JobEvent, JobMode, JobRecord, JobSpec, JobState,
    StorageTarget,
};
pub use node::{
    AdvertisedState, ComputeCapability, DrainRequest, GpuDescriptor, GpuTelemetry, NodeEvent,
    NodeRecord, NodeState,
};
pub use validate::{normalize_digest, validate_job_spec, ValidationError};

/// Milliseconds since the clock's epoch.
pub type Millis = u64;

pub const SECOND: Millis = 1_000;
pub const DAY: Millis = 86_400 * SECOND;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal transition from {from} on {event}")]
pub struct IllegalTransition {
    pub from: String,
    pub event: String,
}

impl IllegalTransition {
    pub fn new(from: impl Debug, event: impl Debug) -> Self {
        Self { from: format!("{from:?}"), event: format!("{event:?}") }
    }
}

/// A closed transition table: every `(state, event)` pair either has an entry
/// or yields [`IllegalTransition`], leaving the original value untouched.
pub trait StateMachine: Copy + Sized {
    type Event: Copy;

    fn transition(self, event: Self::Event) -> Result<Self, IllegalTransition>;
}

/// SHA-256 of `bytes` as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
