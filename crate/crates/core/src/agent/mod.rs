//! Provider-side agent: heartbeats, workload supervision through a runtime
//! adapter, periodic and final checkpoints, and the provider controls
//! (pause, resume, drain, kill-switch).
//!
//! The agent does no I/O of its own. A driver (the network daemon or the
//! simulator) moves heartbeats and departure notices over a link and calls
//! [`Agent::supervise`] at the times returned by [`Agent::next_wake`].

pub mod identity;
pub mod link;
pub mod runtime;
pub mod telemetry;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::coordinator::{
    DepartureKind, DepartureNotice, DeparturePhase, Directive, Heartbeat, HeartbeatAck, RegisterRequest,
    WorkloadPhase, WorkloadReport,
};
use crate::domain::{
    AdvertisedState, CheckpointManifest, CheckpointMode, GpuDescriptor, IllegalTransition, JobId, JobMode,
    JobSpec, Millis, NodeId, SECOND,
};
use crate::resilience::{
    create_checkpoint, payload_bytes, restore, ChainCursor, CheckpointError, CheckpointInput,
    CheckpointPolicy, CheckpointStore, RestoreError, RestoreModel,
};

pub use identity::StateDir;
pub use link::{backoff_delay_ms, join_with_backoff, CoordinatorLink, JoinError, LinkError, Sleeper};
pub use runtime::{
    CheckpointRequest, ContainerId, LaunchRequest, RestorePoint, RuntimeAdapter, RuntimeError,
    SimulatedRegistry, SimulatedRuntime, WorkloadCatalog, WorkloadProfile, WorkloadStatus,
};
pub use telemetry::{GpuLoad, ProbeUnavailable, SimulatedProbe, TelemetryProbe, UnavailableProbe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuntimeKind {
    Simulated,
    OciRuntime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub coordinator_url: String,
    pub state_dir: std::path::PathBuf,
    #[serde(default = "default_heartbeat")]
    pub heartbeat_interval_s: u64,
    #[serde(default = "default_grace")]
    pub grace_s: u64,
    #[serde(default = "default_runtime")]
    pub runtime: RuntimeKind,
}

fn default_heartbeat() -> u64 {
    10
}
fn default_grace() -> u64 {
    60
}
fn default_runtime() -> RuntimeKind {
    RuntimeKind::Simulated
}

impl AgentConfig {
    /// The agent's heartbeat interval must be within ±10 % of the
    /// coordinator's.
    pub fn check_interval(&self, coordinator_interval_s: u64) -> Result<(), String> {
        let ours = self.heartbeat_interval_s as f64;
        let theirs = coordinator_interval_s as f64;
        if (ours - theirs).abs() > 0.1 * theirs {
            return Err(format!(
                "heartbeat_interval_s {ours} differs from the coordinator's {theirs} by more than 10%"
            ));
        }
        Ok(())
    }
}

/// Notebook preset applied to interactive jobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractivePreset {
    pub entrypoint: Vec<String>,
    pub port: u16,
}

impl Default for InteractivePreset {
    fn default() -> Self {
        Self {
            entrypoint: vec!["jupyter".into(), "lab".into(), "--ip=0.0.0.0".into(), "--port=8888".into()],
            port: 8888,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSettings {
    pub heartbeat_interval_s: u64,
    pub grace_s: u64,
    pub full_every_n: u32,
    pub restore: RestoreModel,
    pub interactive: InteractivePreset,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            heartbeat_interval_s: 10,
            grace_s: 60,
            full_every_n: 10,
            restore: RestoreModel::default(),
            interactive: InteractivePreset::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
    #[error("agent is not registered")]
    NotRegistered,
}

/// Observable agent activity, drained by the driver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AgentEvent {
    Launched {
        job: JobId,
        at: Millis,
        /// Time progress starts accruing.
        progress_from: Millis,
        restored_progress: Millis,
        restore_bytes: u64,
        restore_cost_ms: Millis,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        restore_error: Option<String>,
    },
    LaunchFailed { job: JobId, at: Millis, error: String },
    CheckpointWritten { job: JobId, at: Millis, manifest: CheckpointManifest, progress_ms: Millis, is_final: bool },
    CheckpointFailed { job: JobId, at: Millis, error: String },
    Terminated { job: JobId, at: Millis, progress_ms: Millis },
    Exited { job: JobId, at: Millis, code: i32, progress_ms: Millis },
    DepartureStarted { at: Millis, grace_s: u64, kill: bool },
    DepartureCompleted { at: Millis, kind: DepartureKind },
}

#[derive(Debug, Clone)]
struct FinalCheckpoint {
    ready_at: Millis,
    progress_ms: Millis,
    mode: CheckpointMode,
}

#[derive(Debug, Clone)]
struct Workload {
    container: ContainerId,
    spec: JobSpec,
    gpu_indices: Vec<u32>,
    policy: CheckpointPolicy,
    cursor: ChainCursor,
    next_mark: Millis,
    retry_pending: bool,
    final_ckpt: Option<FinalCheckpoint>,
    terminate_at: Option<Millis>,
    stopped: bool,
}

#[derive(Debug, Clone)]
struct Departure {
    kill: bool,
    grace_s: u64,
    checkpointed: Vec<CheckpointManifest>,
}

/// Result of a kill-switch invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillReport {
    pub invoked_at: Millis,
    /// Set once every workload is gone.
    pub finished_at: Option<Millis>,
    pub workloads: usize,
}

pub struct Agent {
    node_id: NodeId,
    gpus: Vec<GpuDescriptor>,
    latency_ms: f64,
    token: Option<String>,
    seq: u64,
    clock: Arc<dyn Clock>,
    runtime: Box<dyn RuntimeAdapter>,
    store: Arc<dyn CheckpointStore>,
    probe: Box<dyn TelemetryProbe>,
    settings: AgentSettings,
    workloads: BTreeMap<JobId, Workload>,
    finished: Vec<WorkloadReport>,
    outbox: Vec<CheckpointManifest>,
    advertised: AdvertisedState,
    departure: Option<Departure>,
    outgoing: VecDeque<DepartureNotice>,
    halted: bool,
    link_up: bool,
    events: Vec<AgentEvent>,
}

impl Agent {
    pub fn new(
        node_id: NodeId,
        gpus: Vec<GpuDescriptor>,
        latency_ms: f64,
        clock: Arc<dyn Clock>,
        runtime: Box<dyn RuntimeAdapter>,
        store: Arc<dyn CheckpointStore>,
        probe: Box<dyn TelemetryProbe>,
        settings: AgentSettings,
    ) -> Self {
        Self {
            node_id,
            gpus,
            latency_ms,
            token: None,
            seq: 0,
            clock,
            runtime,
            store,
            probe,
            settings,
            workloads: BTreeMap::new(),
            finished: Vec::new(),
            outbox: Vec::new(),
            advertised: AdvertisedState::Active,
            departure: None,
            outgoing: VecDeque::new(),
            halted: false,
            link_up: true,
            events: Vec::new(),
        }
    }

    pub fn node_id(&self) -> NodeId {
        self.node_id
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    pub fn set_token(&mut self, token: String) {
        self.token = Some(token);
    }

    pub fn advertised(&self) -> AdvertisedState {
        self.advertised
    }

    /// True once a departure finished or the node crashed; no more heartbeats.
    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn is_departing(&self) -> bool {
        self.departure.is_some()
    }

    pub fn workload_count(&self) -> usize {
        self.workloads.len()
    }

    pub fn jobs(&self) -> Vec<JobId> {
        self.workloads.keys().copied().collect()
    }

    pub fn runtime(&self) -> &dyn RuntimeAdapter {
        self.runtime.as_ref()
    }

    pub fn register_request(&self) -> RegisterRequest {
        RegisterRequest { gpus: self.gpus.clone(), latency_ms: self.latency_ms, prior_id: Some(self.node_id) }
    }

    pub fn take_events(&mut self) -> Vec<AgentEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn take_notice(&mut self) -> Option<DepartureNotice> {
        self.outgoing.pop_front()
    }

    pub fn status(&self, job: JobId) -> Option<WorkloadStatus> {
        self.workloads.get(&job).and_then(|w| self.runtime.status(&w.container))
    }

    // ---- heartbeat ----

    pub fn build_heartbeat(&mut self) -> Option<Heartbeat> {
        if self.halted || self.token.is_none() {
            return None;
        }
        let now = self.clock.now();
        self.supervise(now);
        self.seq = (self.seq + 1).max(now);
        let mut load = Vec::new();
        let mut workloads = Vec::new();
        for (job, w) in &self.workloads {
            let Some(st) = self.runtime.status(&w.container) else { continue };
            let busy = matches!(st.phase, WorkloadPhase::Running | WorkloadPhase::Checkpointing);
            for g in &w.gpu_indices {
                load.push(GpuLoad { gpu_index: *g, busy_mib: busy.then_some(st.gpu_memory_mib) });
            }
            workloads.push(WorkloadReport { job_id: *job, phase: st.phase, gpu_indices: w.gpu_indices.clone(), error: None });
        }
        workloads.extend(self.finished.iter().cloned());
        let telemetry = match self.probe.sample(self.node_id, &self.gpus, &load, now) {
            Ok(t) => t,
            Err(e) => {
                tracing::warn!(error = %e, "telemetry unavailable; heartbeat sent without samples");
                Vec::new()
            }
        };
        Some(Heartbeat {
            node_id: self.node_id,
            seq: self.seq,
            telemetry,
            advertised: self.advertised,
            workloads,
            checkpoints: self.outbox.clone(),
            latency_ms: None,
        })
    }

    /// Records that the coordinator could not be reached. Periodic
    /// checkpoints are deferred until the next acknowledged heartbeat so a
    /// workload the coordinator has already moved elsewhere does not extend
    /// the job's checkpoint chain.
    pub fn link_lost(&mut self) {
        self.link_up = false;
    }

    /// Handles a successful heartbeat round trip for `sent`.
    pub fn on_ack(&mut self, sent: &Heartbeat, ack: &HeartbeatAck) -> Vec<Result<(), AgentError>> {
        self.link_up = true;
        self.outbox.retain(|m| !sent.checkpoints.contains(m));
        self.finished.retain(|r| !sent.workloads.contains(r));
        let results = ack.directives.iter().map(|d| self.execute_directive(d)).collect();
        self.retry_checkpoints();
        results
    }

    pub fn execute_directive(&mut self, d: &Directive) -> Result<(), AgentError> {
        let now = self.clock.now();
        match d {
            Directive::Launch { job_id, spec, gpu_indices, restore_from } => {
                self.launch(*job_id, spec, gpu_indices, restore_from.as_ref(), now)
            }
            Directive::Terminate { job_id, grace_s } => {
                if let Some(w) = self.workloads.remove(job_id) {
                    self.stop_container(*job_id, &w.container, *grace_s, now);
                }
                Ok(())
            }
            Directive::Checkpoint { job_id } => {
                if self.departure.is_none() {
                    self.periodic_checkpoint(*job_id, now);
                }
                Ok(())
            }
            Directive::Drain { grace_s } => {
                if self.departure.is_none() {
                    self.drain(*grace_s);
                }
                Ok(())
            }
            Directive::Kill { grace_s } => {
                self.kill_switch(*grace_s, true);
                Ok(())
            }
            Directive::Pause => {
                if self.departure.is_none() {
                    self.advertised = AdvertisedState::Paused;
                }
                Ok(())
            }
            Directive::Resume => {
                if self.departure.is_none() {
                    self.advertised = AdvertisedState::Active;
                }
                Ok(())
            }
        }
    }

    fn launch(
        &mut self,
        job: JobId,
        spec: &JobSpec,
        gpu_indices: &[u32],
        restore_from: Option<&CheckpointManifest>,
        now: Millis,
    ) -> Result<(), AgentError> {
        if self.workloads.contains_key(&job) || self.departure.is_some() || self.halted {
            return Ok(());
        }
        if let Err(e) = self.runtime.pull_verify(&spec.image_ref, &spec.image_digest) {
            self.finished.push(WorkloadReport {
                job_id: job,
                phase: WorkloadPhase::Exited { code: 125 },
                gpu_indices: gpu_indices.to_vec(),
                error: Some(e.to_string()),
            });
            self.events.push(AgentEvent::LaunchFailed { job, at: now, error: e.to_string() });
            return Err(e.into());
        }
        let req = self.launch_request(job, spec, gpu_indices);
        let floor = restore_from.map(|m| m.seq);
        let (container, point, cursor, bytes, restore_error) =
            match restore(self.store.as_ref(), &spec.storage_target, job, &self.settings.restore) {
                Ok(r) => {
                    let point = RestorePoint { progress_ms: r.progress_ms, delay_ms: r.cost_ms };
                    let mut cursor = r.cursor;
                    cursor.max_seq = cursor.max_seq.max(floor);
                    (self.runtime.restore(&req, point), point, cursor, r.transfer_bytes, r.degraded.map(|e| e.to_string()))
                }
                Err(e) => {
                    let known = self.store.manifests(&spec.storage_target, job).ok().and_then(|m| m.last().map(|m| m.seq));
                    let cursor = ChainCursor { max_seq: known.max(floor), ..Default::default() };
                    let err = (e != RestoreError::NoCheckpoint).then(|| e.to_string());
                    (self.runtime.launch(&req), RestorePoint::default(), cursor, 0, err)
                }
            };
        let container = match container {
            Ok(c) => c,
            Err(e) => {
                self.finished.push(WorkloadReport {
                    job_id: job,
                    phase: WorkloadPhase::Exited { code: 126 },
                    gpu_indices: gpu_indices.to_vec(),
                    error: Some(e.to_string()),
                });
                self.events.push(AgentEvent::LaunchFailed { job, at: now, error: e.to_string() });
                return Err(e.into());
            }
        };
        let policy = CheckpointPolicy {
            interval_s: spec.checkpoint_interval_s,
            mode: spec.checkpoint_mode,
            full_every_n: self.settings.full_every_n,
        };
        self.events.push(AgentEvent::Launched {
            job,
            at: now,
            progress_from: now + point.delay_ms,
            restored_progress: point.progress_ms,
            restore_bytes: bytes,
            restore_cost_ms: point.delay_ms,
            restore_error,
        });
        self.workloads.insert(
            job,
            Workload {
                container,
                spec: spec.clone(),
                gpu_indices: gpu_indices.to_vec(),
                next_mark: point.progress_ms + policy.interval(),
                policy,
                cursor,
                retry_pending: false,
                final_ckpt: None,
                terminate_at: None,
                stopped: false,
            },
        );
        Ok(())
    }

    fn launch_request(&self, job: JobId, spec: &JobSpec, gpu_indices: &[u32]) -> LaunchRequest {
        let devices = gpu_indices.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        let mut env = BTreeMap::new();
        env.insert("NVIDIA_VISIBLE_DEVICES".to_string(), devices.clone());
        env.insert("CUDA_VISIBLE_DEVICES".to_string(), devices);
        env.insert("GPUNION_JOB_ID".to_string(), job.to_string());
        let (entrypoint, published_port) = match spec.mode {
            JobMode::Interactive => (self.settings.interactive.entrypoint.clone(), Some(self.settings.interactive.port)),
            JobMode::Batch => (spec.entrypoint.clone(), None),
        };
        LaunchRequest {
            job_id: job,
            image_ref: spec.image_ref.clone(),
            image_digest: spec.image_digest.clone(),
            entrypoint,
            env,
            gpu_indices: gpu_indices.to_vec(),
            published_port,
            gpu_memory_mib: spec.gpu_memory_mib_required,
            duration_ms: spec.estimated_duration_s * SECOND,
        }
    }

    fn stop_container(&mut self, job: JobId, container: &ContainerId, grace_s: u64, now: Millis) {
        let progress_ms = self.runtime.status(container).map_or(0, |s| s.progress_ms);
        let _ = self.runtime.terminate(container, grace_s);
        self.runtime.remove(container);
        self.events.push(AgentEvent::Terminated { job, at: now, progress_ms });
    }

    // ---- checkpoints ----

    fn write_checkpoint(&mut self, job: JobId, progress_ms: Millis, mode: Option<CheckpointMode>, now: Millis)
        -> Result<CheckpointManifest, CheckpointError> {
        let w = self.workloads.get_mut(&job).expect("caller checked");
        let model = self.runtime.state_model(&w.spec.image_ref);
        let input = CheckpointInput {
            job_id: job,
            target: &w.spec.storage_target,
            policy: &w.policy,
            model: &model,
            progress_ms,
            now,
            force_full: mode == Some(CheckpointMode::Full),
        };
        let mut cursor = w.cursor.clone();
        if mode == Some(CheckpointMode::Incremental) && cursor.tail.is_some() {
            // Final checkpoints extend the chain regardless of full_every_n.
            cursor.chain_len = cursor.chain_len.min(w.policy.full_every_n.saturating_sub(1));
        }
        let result = create_checkpoint(&input, &mut cursor, self.store.as_ref());
        if let Ok(m) = &result {
            cursor.chain_len = if m.is_full() { 1 } else { w.cursor.chain_len + 1 };
            w.cursor = cursor;
        }
        result
    }

    fn periodic_checkpoint(&mut self, job: JobId, now: Millis) {
        let Some(w) = self.workloads.get(&job) else { return };
        if w.stopped || w.final_ckpt.is_some() {
            return;
        }
        let ticket = self.runtime.checkpoint(&w.container, CheckpointRequest { payload_bytes: 0, stop: false, deadline: None });
        let Ok(ticket) = ticket else { return };
        let interval = w.policy.interval();
        let result = self.write_checkpoint(job, ticket.progress_ms, None, now);
        let w = self.workloads.get_mut(&job).expect("present");
        w.next_mark = ticket.progress_ms + interval;
        match result {
            Ok(manifest) => {
                w.retry_pending = false;
                self.outbox.push(manifest.clone());
                self.events.push(AgentEvent::CheckpointWritten {
                    job,
                    at: now,
                    manifest,
                    progress_ms: ticket.progress_ms,
                    is_final: false,
                });
            }
            Err(e) => {
                w.retry_pending = true;
                self.events.push(AgentEvent::CheckpointFailed { job, at: now, error: e.to_string() });
            }
        }
    }

    fn retry_checkpoints(&mut self) {
        let now = self.clock.now();
        let due: Vec<JobId> = self.workloads.iter().filter(|(_, w)| w.retry_pending).map(|(j, _)| *j).collect();
        for job in due {
            self.periodic_checkpoint(job, now);
        }
    }

    /// Advances workload supervision to `now`: reaps exited workloads, takes
    /// due periodic checkpoints and finishes final checkpoints.
    pub fn supervise(&mut self, now: Millis) {
        let jobs: Vec<JobId> = self.workloads.keys().copied().collect();
        for job in jobs {
            let w = &self.workloads[&job];
            let Some(st) = self.runtime.status(&w.container) else { continue };
            if let WorkloadPhase::Exited { code } = st.phase {
                if w.stopped {
                    continue;
                }
                let w = self.workloads.remove(&job).expect("present");
                self.runtime.remove(&w.container);
                self.finished.push(WorkloadReport {
                    job_id: job,
                    phase: WorkloadPhase::Exited { code },
                    gpu_indices: w.gpu_indices.clone(),
                    error: None,
                });
                self.events.push(AgentEvent::Exited { job, at: now, code, progress_ms: st.progress_ms });
                continue;
            }
            if let Some(f) = w.final_ckpt.clone() {
                if f.ready_at <= now {
                    self.finish_final_checkpoint(job, f, now);
                }
                continue;
            }
            if let Some(t) = w.terminate_at {
                if t <= now {
                    let container = w.container.clone();
                    let _ = self.runtime.terminate(&container, 0);
                    let w = self.workloads.get_mut(&job).expect("present");
                    w.stopped = true;
                    w.terminate_at = None;
                    self.events.push(AgentEvent::Terminated { job, at: now, progress_ms: st.progress_ms });
                }
                continue;
            }
            if st.phase == WorkloadPhase::Running && st.progress_ms >= w.next_mark && !w.stopped {
                if self.link_up {
                    self.periodic_checkpoint(job, now);
                } else {
                    self.workloads.get_mut(&job).expect("present").retry_pending = true;
                }
            }
        }
        self.check_departure(now);
    }

    fn finish_final_checkpoint(&mut self, job: JobId, f: FinalCheckpoint, now: Millis) {
        let result = self.write_checkpoint(job, f.progress_ms, Some(f.mode), now);
        let w = self.workloads.get_mut(&job).expect("present");
        w.final_ckpt = None;
        w.stopped = true;
        let container = w.container.clone();
        match result {
            Ok(manifest) => {
                self.outbox.push(manifest.clone());
                if let Some(d) = self.departure.as_mut() {
                    d.checkpointed.push(manifest.clone());
                }
                self.events.push(AgentEvent::CheckpointWritten {
                    job,
                    at: now,
                    manifest,
                    progress_ms: f.progress_ms,
                    is_final: true,
                });
            }
            Err(e) => self.events.push(AgentEvent::CheckpointFailed { job, at: now, error: e.to_string() }),
        }
        let progress_ms = self.runtime.status(&container).map_or(f.progress_ms, |s| s.progress_ms);
        let _ = self.runtime.terminate(&container, 0);
        self.events.push(AgentEvent::Terminated { job, at: now, progress_ms });
    }

    /// Earliest future time at which [`Agent::supervise`] has work to do.
    pub fn next_wake(&self, now: Millis) -> Option<Millis> {
        self.workloads
            .values()
            .filter_map(|w| {
                if let Some(f) = &w.final_ckpt {
                    return Some(f.ready_at);
                }
                if let Some(t) = w.terminate_at {
                    return Some(t);
                }
                if w.stopped {
                    return None;
                }
                let duration = w.spec.estimated_duration_s * SECOND;
                let mark = if w.retry_pending {
                    None
                } else {
                    self.runtime.time_to_progress(&w.container, w.next_mark.min(duration))
                };
                let done = self.runtime.time_to_progress(&w.container, duration);
                [mark, done].into_iter().flatten().min()
            })
            .map(|t| t.max(now))
            .min()
    }

    // ---- provider controls ----

    pub fn pause(&mut self) -> Result<bool, AgentError> {
        self.set_advertised(AdvertisedState::Paused, "Pause")
    }

    pub fn resume(&mut self) -> Result<bool, AgentError> {
        self.set_advertised(AdvertisedState::Active, "Resume")
    }

    fn set_advertised(&mut self, to: AdvertisedState, event: &str) -> Result<bool, AgentError> {
        if self.departure.is_some() || self.halted {
            let from = if self.halted { "Departed" } else { "Draining" };
            return Err(IllegalTransition::new(from, event).into());
        }
        let changed = self.advertised != to;
        self.advertised = to;
        Ok(changed)
    }

    /// Graceful departure: final checkpoints within `grace_s`, then the node
    /// leaves.
    pub fn drain(&mut self, grace_s: u64) {
        self.begin_departure(grace_s, true, false);
    }

    /// Terminates every workload within `grace_s` without any coordinator
    /// round trip. With `allow_checkpoint` and a positive grace, each
    /// workload first gets a best-effort final checkpoint.
    pub fn kill_switch(&mut self, grace_s: u64, allow_checkpoint: bool) -> KillReport {
        let now = self.clock.now();
        let grace = if allow_checkpoint { grace_s } else { 0 };
        let workloads = self.workloads.len();
        self.begin_departure(grace, allow_checkpoint && grace > 0, true);
        KillReport { invoked_at: now, finished_at: self.halted.then_some(now), workloads }
    }

    fn begin_departure(&mut self, grace_s: u64, checkpoint: bool, kill: bool) {
        let now = self.clock.now();
        if self.halted {
            return;
        }
        if let Some(d) = self.departure.as_mut() {
            // A kill during a drain shortens it to the kill's terms.
            if !kill || d.kill {
                return;
            }
            d.kill = true;
        } else {
            self.departure = Some(Departure { kill, grace_s, checkpointed: Vec::new() });
        }
        self.events.push(AgentEvent::DepartureStarted { at: now, grace_s, kill });
        if !kill {
            self.outgoing.push_back(DepartureNotice {
                kind: DepartureKind::Graceful,
                phase: DeparturePhase::Started,
                grace_s,
                checkpoints: Vec::new(),
                sent_at: now,
            });
        }
        let deadline = now + grace_s * SECOND;
        let jobs: Vec<JobId> = self.workloads.keys().copied().collect();
        for job in jobs {
            let w = &self.workloads[&job];
            if w.stopped {
                continue;
            }
            if !checkpoint || grace_s == 0 {
                let container = w.container.clone();
                let progress_ms = self.runtime.status(&container).map_or(0, |s| s.progress_ms);
                let _ = self.runtime.terminate(&container, 0);
                let w = self.workloads.get_mut(&job).expect("present");
                w.stopped = true;
                w.final_ckpt = None;
                w.terminate_at = None;
                self.events.push(AgentEvent::Terminated { job, at: now, progress_ms });
                continue;
            }
            if w.final_ckpt.is_some() {
                continue;
            }
            let mode = if w.cursor.tail.is_some() { CheckpointMode::Incremental } else { CheckpointMode::Full };
            let model = self.runtime.state_model(&w.spec.image_ref);
            let req = CheckpointRequest { payload_bytes: payload_bytes(mode, &model), stop: true, deadline: Some(deadline) };
            let container = w.container.clone();
            let ticket = self.runtime.checkpoint(&container, req);
            let w = self.workloads.get_mut(&job).expect("present");
            match ticket {
                Ok(t) => w.final_ckpt = Some(FinalCheckpoint { ready_at: t.ready_at, progress_ms: t.progress_ms, mode }),
                Err(_) => w.terminate_at = Some(deadline),
            }
        }
        self.check_departure(now);
    }

    fn check_departure(&mut self, now: Millis) {
        let Some(d) = &self.departure else { return };
        let pending = self.workloads.values().any(|w| !w.stopped);
        if pending {
            return;
        }
        let kind = if d.grace_s > 0 && !d.checkpointed.is_empty() || !d.kill {
            DepartureKind::Graceful
        } else {
            DepartureKind::Emergency
        };
        let notice = DepartureNotice {
            kind,
            phase: DeparturePhase::Completed,
            grace_s: d.grace_s,
            checkpoints: d.checkpointed.clone(),
            sent_at: now,
        };
        for w in std::mem::take(&mut self.workloads).into_values() {
            self.runtime.remove(&w.container);
        }
        self.outgoing.push_back(notice);
        self.events.push(AgentEvent::DepartureCompleted { at: now, kind });
        self.departure = None;
        self.finished.clear();
        self.outbox.clear();
        self.halted = true;
    }

    /// Abrupt loss of the machine: every workload dies, nothing is sent.
    pub fn crash(&mut self) {
        let now = self.clock.now();
        for (job, w) in std::mem::take(&mut self.workloads) {
            let progress_ms = self.runtime.status(&w.container).map_or(0, |s| s.progress_ms);
            self.events.push(AgentEvent::Terminated { job, at: now, progress_ms });
        }
        self.runtime.crash();
        for c in self.runtime.containers() {
            self.runtime.remove(&c);
        }
        self.finished.clear();
        self.outbox.clear();
        self.outgoing.clear();
        self.departure = None;
        self.halted = true;
    }

    /// Brings a halted agent back; it keeps its identity and token.
    pub fn restart(&mut self) {
        self.halted = false;
        self.departure = None;
        self.advertised = AdvertisedState::Active;
    }
}
