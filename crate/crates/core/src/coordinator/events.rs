use serde::{Deserialize, Serialize};

use crate::domain::{
    AdvertisedState, AffinityTag, Allocation, CheckpointManifest, JobId, JobRecord, JobState,
    Millis, NodeId, NodeRecord, NodeState,
};

use super::state::CoordinatorState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    NodeRegistered { node: NodeRecord },
    HeartbeatAccepted {
        node: NodeId,
        seq: u64,
        advertised: AdvertisedState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        latency_ms: Option<f64>,
    },
    HeartbeatMissed { node: NodeId, missed: u32 },
    NodeStateChanged { node: NodeId, from: NodeState, to: NodeState, reason: String },
    DrainRequested { node: NodeId, grace_s: u64 },
    KillRequested { node: NodeId, grace_s: u64 },
    VolatilityUpdated { node: NodeId, volatility_score: f64, interruptions_today: u32 },
    DayRolled { day: u64 },
    JobEnqueued { job: JobRecord },
    AllocationGranted { allocation: Allocation, via_affinity: bool },
    CheckpointRequested { job: JobId, requested: bool },
    CheckpointRecorded { manifest: CheckpointManifest },
    MigrationStarted { job: JobId, from: NodeId, reason: String, affinity: AffinityTag },
    MigrationCompleted { job: JobId, to: NodeId, returned: bool },
    JobStateChanged { job: JobId, from: JobState, to: JobState, reason: String },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::NodeRegistered { .. } => "node_registered",
            Event::HeartbeatAccepted { .. } => "heartbeat_accepted",
            Event::HeartbeatMissed { .. } => "heartbeat_missed",
            Event::NodeStateChanged { .. } => "node_state_changed",
            Event::DrainRequested { .. } => "drain_requested",
            Event::KillRequested { .. } => "kill_requested",
            Event::VolatilityUpdated { .. } => "volatility_updated",
            Event::DayRolled { .. } => "day_rolled",
            Event::JobEnqueued { .. } => "job_enqueued",
            Event::AllocationGranted { .. } => "allocation_granted",
            Event::CheckpointRequested { .. } => "checkpoint_requested",
            Event::CheckpointRecorded { .. } => "checkpoint_recorded",
            Event::MigrationStarted { .. } => "migration_started",
            Event::MigrationCompleted { .. } => "migration_completed",
            Event::JobStateChanged { .. } => "job_state_changed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub seq: u64,
    pub at: Millis,
    pub payload: Event,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("gap in event log: expected seq {expected}, found {found}")]
    GapInLog { expected: u64, found: u64 },
    #[error("corrupt event log entry {seq}: {reason}")]
    CorruptEntry { seq: u64, reason: String },
}

/// Rebuilds coordinator state from an ordered log. Sequence numbers start at 1
/// and must be gapless.
pub fn replay<I>(entries: I) -> Result<CoordinatorState, ReplayError>
where
    I: IntoIterator<Item = EventLogEntry>,
{
    let mut state = CoordinatorState::default();
    for entry in entries {
        let expected = state.last_seq + 1;
        if entry.seq != expected {
            return Err(ReplayError::GapInLog { expected, found: entry.seq });
        }
        state
            .apply(&entry)
            .map_err(|reason| ReplayError::CorruptEntry { seq: entry.seq, reason })?;
    }
    Ok(state)
}
