use serde::{Deserialize, Serialize};

use super::{JobId, Millis, NodeId, StorageTarget};

/// Metadata for one stored checkpoint payload. A manifest without a parent is
/// a full checkpoint; otherwise it is a delta on top of `parent_seq`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub job_id: JobId,
    pub seq: u64,
    pub parent_seq: Option<u64>,
    pub created_at: Millis,
    pub payload_bytes: u64,
    /// SHA-256 of the payload object, lowercase hex.
    pub content_hash: String,
    pub target: StorageTarget,
}

impl CheckpointManifest {
    pub fn is_full(&self) -> bool {
        self.parent_seq.is_none()
    }
}

/// Walks parent links from `tail` and returns the chain in Full-first order,
/// or `None` if a parent is missing or the links do not strictly decrease.
pub fn resolve_chain<'a>(
    manifests: &'a [CheckpointManifest],
    tail: &'a CheckpointManifest,
) -> Option<Vec<&'a CheckpointManifest>> {
    let mut chain = vec![tail];
    let mut cur = tail;
    while let Some(parent) = cur.parent_seq {
        if parent >= cur.seq {
            return None;
        }
        cur = manifests.iter().find(|m| m.seq == parent && m.job_id == tail.job_id)?;
        chain.push(cur);
    }
    chain.reverse();
    Some(chain)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterruptionKind {
    /// Provider-initiated graceful shutdown.
    ScheduledDeparture,
    /// Immediate disconnection.
    EmergencyDeparture,
    TemporaryUnavailability { duration_s: u64 },
}

impl InterruptionKind {
    pub fn label(&self) -> &'static str {
        match self {
            InterruptionKind::ScheduledDeparture => "scheduled",
            InterruptionKind::EmergencyDeparture => "emergency",
            InterruptionKind::TemporaryUnavailability { .. } => "temporary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptionEvent {
    pub kind: InterruptionKind,
    pub node: NodeId,
    pub at: Millis,
}

impl InterruptionEvent {
    pub fn validate(&self) -> Result<(), String> {
        if let InterruptionKind::TemporaryUnavailability { duration_s: 0 } = self.kind {
            return Err("temporary unavailability needs a positive duration".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(seq: u64, parent: Option<u64>) -> CheckpointManifest {
        CheckpointManifest {
            job_id: JobId(1),
            seq,
            parent_seq: parent,
            created_at: seq * 1000,
            payload_bytes: 10,
            content_hash: String::new(),
            target: StorageTarget::SharedFs { path: "/ckpt".into() },
        }
    }

    #[test]
    fn chain_resolves_to_full() {
        let ms = vec![m(0, None), m(1, Some(0)), m(2, Some(1))];
        let chain = resolve_chain(&ms, &ms[2]).unwrap();
        assert_eq!(chain.iter().map(|c| c.seq).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(chain[0].is_full());
    }

    #[test]
    fn missing_parent_breaks_chain() {
        let ms = vec![m(1, Some(0)), m(2, Some(1))];
        assert!(resolve_chain(&ms, &ms[1]).is_none());
    }

    #[test]
    fn zero_temporary_duration_rejected() {
        let ev = InterruptionEvent {
            kind: InterruptionKind::TemporaryUnavailability { duration_s: 0 },
            node: NodeId::from_u128(3),
            at: 0,
        };
        assert!(ev.validate().is_err());
    }
}
