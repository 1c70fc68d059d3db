//! Container runtime interface and the simulated backend.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::coordinator::WorkloadPhase;
use crate::domain::{normalize_digest, JobId, Millis};
use crate::resilience::WorkloadStateModel;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContainerId(pub String);

impl std::fmt::Display for ContainerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuntimeError {
    #[error("DigestMismatch: image {image_ref} resolved to {actual}, expected {expected}")]
    DigestMismatch { image_ref: String, expected: String, actual: String },
    #[error("RuntimeFailure: {0}")]
    RuntimeFailure(String),
    #[error("unknown container {0}")]
    UnknownContainer(ContainerId),
    #[error("checkpoint of {0} cannot finish before its deadline")]
    CheckpointDeadline(ContainerId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchRequest {
    pub job_id: JobId,
    pub image_ref: String,
    pub image_digest: String,
    pub entrypoint: Vec<String>,
    pub env: BTreeMap<String, String>,
    pub gpu_indices: Vec<u32>,
    pub published_port: Option<u16>,
    pub gpu_memory_mib: u64,
    pub duration_ms: Millis,
}

/// Where a restored workload resumes and how long restoring takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RestorePoint {
    pub progress_ms: Millis,
    pub delay_ms: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointRequest {
    pub payload_bytes: u64,
    /// Stop the workload and capture a final checkpoint.
    pub stop: bool,
    /// Latest acceptable completion time for a stopping checkpoint.
    pub deadline: Option<Millis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointTicket {
    /// Progress captured; the restore point of the resulting manifest.
    pub progress_ms: Millis,
    pub ready_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadStatus {
    pub container: ContainerId,
    pub job_id: JobId,
    pub phase: WorkloadPhase,
    pub progress_ms: Millis,
    pub gpu_indices: Vec<u32>,
    pub gpu_memory_mib: u64,
}

pub trait RuntimeAdapter: Send {
    /// Resolves `image_ref` and checks it against `digest`.
    fn pull_verify(&mut self, image_ref: &str, digest: &str) -> Result<(), RuntimeError>;
    fn launch(&mut self, req: &LaunchRequest) -> Result<ContainerId, RuntimeError>;
    fn restore(&mut self, req: &LaunchRequest, point: RestorePoint) -> Result<ContainerId, RuntimeError>;
    fn checkpoint(&mut self, id: &ContainerId, req: CheckpointRequest) -> Result<CheckpointTicket, RuntimeError>;
    fn terminate(&mut self, id: &ContainerId, grace_s: u64) -> Result<(), RuntimeError>;
    fn status(&self, id: &ContainerId) -> Option<WorkloadStatus>;
    /// Removes an exited or terminated container from the runtime's table.
    fn remove(&mut self, id: &ContainerId);
    fn containers(&self) -> Vec<ContainerId>;
    /// Absolute time at which the workload reaches `progress_ms`, if it is
    /// progressing.
    fn time_to_progress(&self, id: &ContainerId, progress_ms: Millis) -> Option<Millis>;
    /// Stops every workload immediately, as on power loss.
    fn crash(&mut self);
    /// Size and dirty rate of the workload's state, used to size payloads.
    fn state_model(&self, image_ref: &str) -> WorkloadStateModel;
}

/// Image registry for the simulated runtime: image reference to digest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatedRegistry {
    pub images: BTreeMap<String, String>,
}

impl SimulatedRegistry {
    pub fn with(mut self, image_ref: &str, digest: &str) -> Self {
        self.images.insert(image_ref.to_string(), digest.to_string());
        self
    }
}

/// Simulated behavior of an image's workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub state: WorkloadStateModel,
    #[serde(default)]
    pub checkpoint_base_s: f64,
    #[serde(default)]
    pub checkpoint_per_gib_s: f64,
}

impl WorkloadProfile {
    pub fn checkpoint_cost_ms(&self, payload_bytes: u64) -> Millis {
        let gib = payload_bytes as f64 / (1u64 << 30) as f64;
        ((self.checkpoint_base_s + self.checkpoint_per_gib_s * gib) * 1000.0).ceil() as Millis
    }
}

impl Default for WorkloadProfile {
    fn default() -> Self {
        Self {
            state: WorkloadStateModel { total_state_bytes: 1 << 30, dirty_fraction: 0.10 },
            checkpoint_base_s: 5.0,
            checkpoint_per_gib_s: 2.0,
        }
    }
}

/// Workload profiles keyed by image reference.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkloadCatalog {
    pub profiles: BTreeMap<String, WorkloadProfile>,
    #[serde(default)]
    pub fallback: WorkloadProfile,
}

impl WorkloadCatalog {
    pub fn profile(&self, image_ref: &str) -> &WorkloadProfile {
        self.profiles.get(image_ref).unwrap_or(&self.fallback)
    }
}

#[derive(Debug, Clone)]
struct SimContainer {
    job_id: JobId,
    image_ref: String,
    gpu_indices: Vec<u32>,
    gpu_memory_mib: u64,
    duration_ms: Millis,
    /// Progress when the container starts (or resumes) making progress.
    base_progress: Millis,
    /// Time progress starts accruing; later than launch while restoring.
    progress_from: Millis,
    restoring: bool,
    halted_at: Option<Millis>,
    checkpoint_until: Option<Millis>,
    exit: Option<i32>,
}

impl SimContainer {
    fn progress_at(&self, t: Millis) -> Millis {
        let until = self.halted_at.map_or(t, |h| h.min(t));
        let ran = until.saturating_sub(self.progress_from);
        (self.base_progress + ran).min(self.duration_ms)
    }

    fn completes_at(&self) -> Option<Millis> {
        if self.halted_at.is_some() || self.exit.is_some() {
            return None;
        }
        Some(self.progress_from + (self.duration_ms - self.base_progress.min(self.duration_ms)))
    }

    fn phase_at(&self, t: Millis) -> WorkloadPhase {
        if let Some(code) = self.exit {
            return WorkloadPhase::Exited { code };
        }
        if self.completes_at().is_some_and(|c| t >= c) {
            return WorkloadPhase::Exited { code: 0 };
        }
        if let Some(until) = self.checkpoint_until {
            return if t < until { WorkloadPhase::Checkpointing } else { WorkloadPhase::Stopped };
        }
        if self.halted_at.is_some() {
            return WorkloadPhase::Stopped;
        }
        if t < self.progress_from {
            return if self.restoring { WorkloadPhase::Restoring } else { WorkloadPhase::Starting };
        }
        WorkloadPhase::Running
    }
}

/// Deterministic in-memory runtime: workloads progress 1:1 with the injected
/// clock, checkpoints are copy-on-write (0 s pause) unless stopping.
pub struct SimulatedRuntime {
    clock: Arc<dyn Clock>,
    registry: SimulatedRegistry,
    catalog: WorkloadCatalog,
    verified: BTreeSet<(String, String)>,
    containers: BTreeMap<ContainerId, SimContainer>,
    prefix: String,
    next: u64,
}

impl SimulatedRuntime {
    pub fn new(clock: Arc<dyn Clock>, registry: SimulatedRegistry, catalog: WorkloadCatalog, prefix: &str) -> Self {
        Self {
            clock,
            registry,
            catalog,
            verified: BTreeSet::new(),
            containers: BTreeMap::new(),
            prefix: prefix.to_string(),
            next: 0,
        }
    }

    pub fn catalog(&self) -> &WorkloadCatalog {
        &self.catalog
    }

    fn start(&mut self, req: &LaunchRequest, point: RestorePoint, restoring: bool) -> Result<ContainerId, RuntimeError> {
        let digest = normalize_digest(&req.image_digest)
            .ok_or_else(|| RuntimeError::RuntimeFailure(format!("malformed digest {}", req.image_digest)))?;
        if !self.verified.contains(&(req.image_ref.clone(), digest)) {
            return Err(RuntimeError::RuntimeFailure(format!("image {} not verified", req.image_ref)));
        }
        let now = self.clock.now();
        let id = ContainerId(format!("{}-{:06}", self.prefix, self.next));
        self.next += 1;
        self.containers.insert(
            id.clone(),
            SimContainer {
                job_id: req.job_id,
                image_ref: req.image_ref.clone(),
                gpu_indices: req.gpu_indices.clone(),
                gpu_memory_mib: req.gpu_memory_mib,
                duration_ms: req.duration_ms,
                base_progress: point.progress_ms,
                progress_from: now + point.delay_ms,
                restoring,
                halted_at: None,
                checkpoint_until: None,
                exit: None,
            },
        );
        Ok(id)
    }

    fn get(&self, id: &ContainerId) -> Result<&SimContainer, RuntimeError> {
        self.containers.get(id).ok_or_else(|| RuntimeError::UnknownContainer(id.clone()))
    }
}

impl RuntimeAdapter for SimulatedRuntime {
    fn pull_verify(&mut self, image_ref: &str, digest: &str) -> Result<(), RuntimeError> {
        let expected = normalize_digest(digest).unwrap_or_else(|| digest.to_string());
        let actual = self
            .registry
            .images
            .get(image_ref)
            .ok_or_else(|| RuntimeError::RuntimeFailure(format!("image {image_ref} not found")))?;
        let actual = normalize_digest(actual).unwrap_or_else(|| actual.clone());
        if actual != expected {
            return Err(RuntimeError::DigestMismatch { image_ref: image_ref.to_string(), expected, actual });
        }
        self.verified.insert((image_ref.to_string(), actual));
        Ok(())
    }

    fn launch(&mut self, req: &LaunchRequest) -> Result<ContainerId, RuntimeError> {
        self.start(req, RestorePoint::default(), false)
    }

    fn restore(&mut self, req: &LaunchRequest, point: RestorePoint) -> Result<ContainerId, RuntimeError> {
        self.start(req, point, true)
    }

    fn checkpoint(&mut self, id: &ContainerId, req: CheckpointRequest) -> Result<CheckpointTicket, RuntimeError> {
        let now = self.clock.now();
        let c = self.get(id)?;
        if c.exit.is_some() || c.halted_at.is_some() {
            return Err(RuntimeError::RuntimeFailure(format!("container {id} is not running")));
        }
        let progress_ms = c.progress_at(now);
        if !req.stop {
            return Ok(CheckpointTicket { progress_ms, ready_at: now });
        }
        let cost = *self.catalog.profile(&c.image_ref);
        let ready_at = now + cost.checkpoint_cost_ms(req.payload_bytes);
        let c = self.containers.get_mut(id).expect("checked above");
        c.halted_at = Some(now);
        if req.deadline.is_some_and(|d| ready_at > d) {
            c.checkpoint_until = None;
            return Err(RuntimeError::CheckpointDeadline(id.clone()));
        }
        c.checkpoint_until = Some(ready_at);
        Ok(CheckpointTicket { progress_ms, ready_at })
    }

    fn terminate(&mut self, id: &ContainerId, _grace_s: u64) -> Result<(), RuntimeError> {
        let now = self.clock.now();
        let c = self.containers.get_mut(id).ok_or_else(|| RuntimeError::UnknownContainer(id.clone()))?;
        if c.halted_at.is_none() {
            c.halted_at = Some(now);
        }
        c.checkpoint_until = None;
        if c.exit.is_none() {
            c.exit = Some(137);
        }
        Ok(())
    }

    fn status(&self, id: &ContainerId) -> Option<WorkloadStatus> {
        let now = self.clock.now();
        let c = self.containers.get(id)?;
        Some(WorkloadStatus {
            container: id.clone(),
            job_id: c.job_id,
            phase: c.phase_at(now),
            progress_ms: c.progress_at(now),
            gpu_indices: c.gpu_indices.clone(),
            gpu_memory_mib: c.gpu_memory_mib,
        })
    }

    fn remove(&mut self, id: &ContainerId) {
        self.containers.remove(id);
    }

    fn containers(&self) -> Vec<ContainerId> {
        self.containers.keys().cloned().collect()
    }

    fn time_to_progress(&self, id: &ContainerId, progress_ms: Millis) -> Option<Millis> {
        let c = self.containers.get(id)?;
        if c.halted_at.is_some() || c.exit.is_some() || progress_ms > c.duration_ms {
            return None;
        }
        Some(c.progress_from + progress_ms.saturating_sub(c.base_progress))
    }

    fn state_model(&self, image_ref: &str) -> WorkloadStateModel {
        self.catalog.profile(image_ref).state
    }

    fn crash(&mut self) {
        let now = self.clock.now();
        for c in self.containers.values_mut() {
            if c.halted_at.is_none() {
                c.halted_at = Some(now);
            }
            c.checkpoint_until = None;
            c.exit.get_or_insert(137);
        }
    }
}

