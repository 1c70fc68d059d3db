//! Messages exchanged between agents and the coordinator.

use serde::{Deserialize, Serialize};

use crate::domain::{
    AdvertisedState, CheckpointManifest, GpuDescriptor, GpuTelemetry, JobId, JobSpec, Millis, NodeId,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub gpus: Vec<GpuDescriptor>,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_id: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub node_id: NodeId,
    pub token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadPhase {
    Starting,
    /// Restoring state from a checkpoint chain before progress resumes.
    Restoring,
    Running,
    Checkpointing,
    Terminating,
    /// Stopped by the provider side (drain or kill-switch); not a job outcome.
    Stopped,
    Exited { code: i32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub job_id: JobId,
    pub phase: WorkloadPhase,
    #[serde(default)]
    pub gpu_indices: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub node_id: NodeId,
    pub seq: u64,
    #[serde(default)]
    pub telemetry: Vec<GpuTelemetry>,
    pub advertised: AdvertisedState,
    #[serde(default)]
    pub workloads: Vec<WorkloadReport>,
    /// Manifests written since the last acknowledged heartbeat.
    #[serde(default)]
    pub checkpoints: Vec<CheckpointManifest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Directive {
    Launch {
        job_id: JobId,
        spec: JobSpec,
        gpu_indices: Vec<u32>,
        /// Latest checkpoint the coordinator knows about, if any.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        restore_from: Option<CheckpointManifest>,
    },
    Terminate { job_id: JobId, grace_s: u64 },
    Checkpoint { job_id: JobId },
    Drain { grace_s: u64 },
    /// Relayed kill-switch request.
    Kill { grace_s: u64 },
    Pause,
    Resume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartbeatAck {
    pub ack: bool,
    pub directives: Vec<Directive>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DepartureKind {
    Graceful,
    Emergency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeparturePhase {
    /// The agent began draining; workloads are being checkpointed.
    Started,
    /// All workloads are gone; the agent stops heartbeating.
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartureNotice {
    pub kind: DepartureKind,
    pub phase: DeparturePhase,
    pub grace_s: u64,
    /// Final manifests written during the grace period.
    #[serde(default)]
    pub checkpoints: Vec<CheckpointManifest>,
    #[serde(default)]
    pub sent_at: Millis,
}
