use serde::{Deserialize, Serialize};

use crate::domain::{sha256_hex, CheckpointManifest, CheckpointMode, JobId, Millis, StorageTarget};

use super::policy::{payload_bytes, CheckpointPolicy, WorkloadStateModel};
use super::store::{CheckpointStore, StoreError};

/// The bytes actually stored for a checkpoint. `payload_bytes` on the
/// manifest is the simulated size of the captured state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadBlob {
    pub job_id: JobId,
    pub seq: u64,
    pub progress_ms: Millis,
    pub mode: CheckpointMode,
}

impl PayloadBlob {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("payload blob serializes")
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        serde_json::from_slice(bytes).ok()
    }
}

/// Per-job view of the stored chain, carried by the agent between checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChainCursor {
    pub max_seq: Option<u64>,
    pub tail: Option<CheckpointManifest>,
    /// Manifests in the verified chain ending at `tail`, Full included.
    pub chain_len: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("storage target unavailable: {0}")]
    StorageTargetUnavailable(String),
    #[error("runtime checkpoint failure: {0}")]
    RuntimeCheckpointFailure(String),
}

#[derive(Debug, Clone)]
pub struct CheckpointInput<'a> {
    pub job_id: JobId,
    pub target: &'a StorageTarget,
    pub policy: &'a CheckpointPolicy,
    pub model: &'a WorkloadStateModel,
    /// Progress at checkpoint start; becomes the restore point.
    pub progress_ms: Millis,
    pub now: Millis,
    /// Forces a Full manifest regardless of policy.
    pub force_full: bool,
}

/// Writes the next manifest of the job's chain. On failure the cursor is left
/// untouched so the next attempt reuses the same parent.
pub fn create_checkpoint(
    input: &CheckpointInput<'_>,
    cursor: &mut ChainCursor,
    store: &dyn CheckpointStore,
) -> Result<CheckpointManifest, CheckpointError> {
    let chain_len = cursor.tail.as_ref().map(|_| cursor.chain_len);
    let mode = if input.force_full { CheckpointMode::Full } else { input.policy.next_kind(chain_len) };
    let seq = cursor.max_seq.map_or(0, |s| s + 1);
    let parent_seq = match mode {
        CheckpointMode::Full => None,
        CheckpointMode::Incremental => cursor.tail.as_ref().map(|t| t.seq),
    };
    let blob = PayloadBlob { job_id: input.job_id, seq, progress_ms: input.progress_ms, mode }.encode();
    let manifest = CheckpointManifest {
        job_id: input.job_id,
        seq,
        parent_seq,
        created_at: input.now,
        payload_bytes: payload_bytes(mode, input.model),
        content_hash: sha256_hex(&blob),
        target: input.target.clone(),
    };
    store.put(input.target, &manifest, &blob).map_err(|e| match e {
        StoreError::Unavailable(m) => CheckpointError::StorageTargetUnavailable(m),
        other => CheckpointError::StorageTargetUnavailable(other.to_string()),
    })?;
    cursor.max_seq = Some(seq);
    cursor.chain_len = if manifest.is_full() { 1 } else { cursor.chain_len + 1 };
    cursor.tail = Some(manifest.clone());
    Ok(manifest)
}
