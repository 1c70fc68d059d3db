use crate::domain::{resolve_chain, sha256_hex, CheckpointManifest, JobId, Millis, StorageTarget};

use super::checkpoint::{ChainCursor, PayloadBlob};
use super::policy::RestoreModel;
use super::store::{CheckpointStore, StoreError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RestoreError {
    #[error("no checkpoint stored")]
    NoCheckpoint,
    #[error("hash mismatch at seq {seq}")]
    HashMismatch { seq: u64 },
    #[error("chain ending at seq {seq} does not reach a full checkpoint")]
    BrokenChain { seq: u64 },
    #[error("payload missing at seq {seq}")]
    PayloadMissing { seq: u64 },
    #[error("storage target unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Restored {
    pub progress_ms: Millis,
    /// Verified manifests, Full first.
    pub chain: Vec<CheckpointManifest>,
    pub transfer_bytes: u64,
    pub cost_ms: Millis,
    pub cursor: ChainCursor,
    /// Set when a later link failed and an earlier prefix was restored.
    pub degraded: Option<RestoreError>,
}

fn verify(store: &dyn CheckpointStore, target: &StorageTarget, m: &CheckpointManifest) -> Result<PayloadBlob, RestoreError> {
    let bytes = store.payload(target, m.job_id, m.seq).map_err(|e| match e {
        StoreError::PayloadMissing { .. } => RestoreError::PayloadMissing { seq: m.seq },
        StoreError::Unavailable(s) => RestoreError::Unavailable(s),
        StoreError::Io(_) => RestoreError::PayloadMissing { seq: m.seq },
    })?;
    if sha256_hex(&bytes) != m.content_hash {
        return Err(RestoreError::HashMismatch { seq: m.seq });
    }
    match PayloadBlob::decode(&bytes) {
        Some(b) if b.job_id == m.job_id && b.seq == m.seq => Ok(b),
        _ => Err(RestoreError::HashMismatch { seq: m.seq }),
    }
}

/// Restores the newest resolvable chain for `job`, verifying from the Full
/// manifest forward and stopping at the first bad link.
pub fn restore(
    store: &dyn CheckpointStore,
    target: &StorageTarget,
    job: JobId,
    model: &RestoreModel,
) -> Result<Restored, RestoreError> {
    let manifests = store.manifests(target, job).map_err(|e| match e {
        StoreError::Unavailable(s) => RestoreError::Unavailable(s),
        other => RestoreError::Unavailable(other.to_string()),
    })?;
    let max_seq = manifests.last().ok_or(RestoreError::NoCheckpoint)?.seq;
    let chain = manifests
        .iter()
        .rev()
        .find_map(|tail| resolve_chain(&manifests, tail))
        .ok_or(RestoreError::BrokenChain { seq: max_seq })?;

    let mut verified: Vec<CheckpointManifest> = Vec::new();
    let mut progress_ms = 0;
    let mut degraded = None;
    for m in chain {
        match verify(store, target, m) {
            Ok(blob) => {
                progress_ms = blob.progress_ms;
                verified.push(m.clone());
            }
            Err(e) if verified.is_empty() => return Err(e),
            Err(e) => {
                degraded = Some(e);
                break;
            }
        }
    }
    let transfer_bytes = verified.iter().map(|m| m.payload_bytes).sum();
    Ok(Restored {
        progress_ms,
        transfer_bytes,
        cost_ms: model.restore_cost_ms(transfer_bytes),
        cursor: ChainCursor {
            max_seq: Some(max_seq),
            chain_len: verified.len() as u32,
            tail: verified.last().cloned(),
        },
        chain: verified,
        degraded,
    })
}
