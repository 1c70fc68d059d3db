use serde::{Deserialize, Serialize};

use super::{
    CheckpointManifest, ComputeCapability, IllegalTransition, JobId, Millis, NodeId, StateMachine,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobMode {
    Interactive,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointMode {
    Full,
    Incremental,
}

/// Where checkpoint payloads and manifests are written.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StorageTarget {
    SharedFs { path: String },
    Node { node: NodeId, path: String },
    Local { path: String },
}

impl StorageTarget {
    pub fn path(&self) -> &str {
        match self {
            StorageTarget::SharedFs { path }
            | StorageTarget::Node { path, .. }
            | StorageTarget::Local { path } => path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub image_ref: String,
    pub image_digest: String,
    pub mode: JobMode,
    /// Batch only.
    #[serde(default)]
    pub entrypoint: Vec<String>,
    pub gpu_memory_mib_required: u64,
    pub min_compute_capability: ComputeCapability,
    /// Higher is more urgent.
    #[serde(default)]
    pub priority: i32,
    pub checkpoint_interval_s: u64,
    pub checkpoint_mode: CheckpointMode,
    pub storage_target: StorageTarget,
    pub estimated_duration_s: u64,
    /// Return-migration window; 0 means "use the coordinator default".
    #[serde(default)]
    pub affinity_window_s: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Scheduled,
    Running,
    Checkpointing,
    Migrating,
    Completed,
    Failed,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobEvent {
    Schedule,
    Start,
    BeginCheckpoint,
    EndCheckpoint,
    /// The hosting node went away.
    Displace,
    /// A migration target was chosen.
    Reschedule,
    /// No migration target; back to the queue.
    Requeue,
    Complete,
    Fail,
    /// No checkpoint and not re-queueable.
    Lose,
    Cancel,
}

impl JobEvent {
    pub const ALL: [JobEvent; 11] = [
        JobEvent::Schedule,
        JobEvent::Start,
        JobEvent::BeginCheckpoint,
        JobEvent::EndCheckpoint,
        JobEvent::Displace,
        JobEvent::Reschedule,
        JobEvent::Requeue,
        JobEvent::Complete,
        JobEvent::Fail,
        JobEvent::Lose,
        JobEvent::Cancel,
    ];
}

impl JobState {
    pub const ALL: [JobState; 8] = [
        JobState::Pending,
        JobState::Scheduled,
        JobState::Running,
        JobState::Checkpointing,
        JobState::Migrating,
        JobState::Completed,
        JobState::Failed,
        JobState::Lost,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Completed | JobState::Failed | JobState::Lost)
    }

    /// States in which the job holds GPUs.
    pub fn holds_allocation(self) -> bool {
        matches!(self, JobState::Scheduled | JobState::Running | JobState::Checkpointing)
    }
}

impl StateMachine for JobState {
    type Event = JobEvent;

    fn transition(self, event: JobEvent) -> Result<Self, IllegalTransition> {
        use JobEvent as E;
        use JobState as S;
        let next = match (self, event) {
            (S::Pending, E::Schedule) => S::Scheduled,
            (S::Scheduled, E::Start) => S::Running,
            (S::Running, E::BeginCheckpoint) => S::Checkpointing,
            (S::Checkpointing, E::EndCheckpoint) => S::Running,
            // Scheduled jobs whose node disappears before launch are displaced too.
            (S::Scheduled | S::Running | S::Checkpointing, E::Displace) => S::Migrating,
            (S::Migrating, E::Reschedule) => S::Scheduled,
            (S::Migrating, E::Requeue) => S::Pending,
            (S::Running, E::Complete) => S::Completed,
            (S::Scheduled | S::Running | S::Checkpointing, E::Fail) => S::Failed,
            (S::Migrating, E::Lose) => S::Lost,
            (
                S::Pending | S::Scheduled | S::Running | S::Checkpointing | S::Migrating,
                E::Cancel,
            ) => S::Failed,
            _ => return Err(IllegalTransition::new(self, event)),
        };
        Ok(next)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub job_id: JobId,
    pub node_id: NodeId,
    pub gpu_indices: Vec<u32>,
    pub granted_at: Millis,
}

/// Return-migration preference for a displaced job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffinityTag {
    pub node: NodeId,
    pub expires_at: Millis,
}

impl AffinityTag {
    pub fn is_live(&self, now: Millis) -> bool {
        now <= self.expires_at
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: JobId,
    pub spec: JobSpec,
    pub state: JobState,
    pub enqueue_seq: u64,
    pub submitted_at: Millis,
    pub allocation: Option<Allocation>,
    pub history: Vec<Allocation>,
    pub affinity: Option<AffinityTag>,
    pub displaced_from: Option<NodeId>,
    pub displacements: u32,
    /// Manifests reported by agents, in seq order.
    pub checkpoints: Vec<CheckpointManifest>,
    pub checkpoint_requested: bool,
    pub last_reason: Option<String>,
}

impl JobRecord {
    pub fn latest_checkpoint(&self) -> Option<&CheckpointManifest> {
        self.checkpoints.last()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifecycle_happy_path() {
        let s = JobState::Pending;
        let s = s.transition(JobEvent::Schedule).unwrap();
        let s = s.transition(JobEvent::Start).unwrap();
        let s = s.transition(JobEvent::BeginCheckpoint).unwrap();
        let s = s.transition(JobEvent::EndCheckpoint).unwrap();
        assert_eq!(s.transition(JobEvent::Complete), Ok(JobState::Completed));
    }

    #[test]
    fn migration_paths() {
        let m = JobState::Running.transition(JobEvent::Displace).unwrap();
        assert_eq!(m, JobState::Migrating);
        assert_eq!(m.transition(JobEvent::Reschedule), Ok(JobState::Scheduled));
        assert_eq!(m.transition(JobEvent::Requeue), Ok(JobState::Pending));
        assert_eq!(m.transition(JobEvent::Lose), Ok(JobState::Lost));
        assert!(JobState::Running.transition(JobEvent::Lose).is_err());
    }

    #[test]
    fn terminal_states_accept_nothing() {
        for s in JobState::ALL.into_iter().filter(|s| s.is_terminal()) {
            for e in JobEvent::ALL {
                assert!(s.transition(e).is_err(), "{s:?} accepted {e:?}");
            }
        }
    }

    #[test]
    fn affinity_expiry_is_inclusive() {
        let tag = AffinityTag { node: NodeId::from_u128(1), expires_at: 100 };
        assert!(tag.is_live(100));
        assert!(!tag.is_live(101));
    }
}
