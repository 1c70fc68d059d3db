//! Checkpoint creation, hash-verified restore, lost-work accounting and
//! migration planning.

mod checkpoint;
mod lost;
mod migration;
mod policy;
mod restore;
mod store;

pub use checkpoint::{create_checkpoint, ChainCursor, CheckpointError, CheckpointInput, PayloadBlob};
pub use lost::lost_work;
pub use migration::{plan_migration, MigrationOutcome};
pub use policy::{
    payload_bytes, transfer_ms, CheckpointPolicy, RestoreModel, WorkloadStateModel, MANIFEST_OVERHEAD_BYTES,
};
pub use restore::{restore, RestoreError, Restored};
pub use store::{namespace, CheckpointStore, FsCheckpointStore, MemoryCheckpointStore, StoreError};
