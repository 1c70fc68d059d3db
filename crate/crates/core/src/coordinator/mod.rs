//! Central registry and scheduler.
//!
//! Every mutation is decided by a command method, recorded as an [`Event`],
//! and applied through [`CoordinatorState::apply`]. Replaying the log from an
//! empty state therefore reproduces the live state exactly.

pub mod config;
pub mod events;
pub mod monitoring;
pub mod placement;
pub mod protocol;
pub mod queue;
pub mod state;
pub mod store;
pub mod views;
pub mod volatility;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::domain::{
    sha256_hex, validate_job_spec, AdvertisedState, AffinityTag, Allocation, CheckpointManifest,
    IllegalTransition, JobEvent, JobId, JobRecord, JobSpec, JobState, Millis, NodeEvent, NodeId,
    NodeRecord, NodeState, StateMachine, ValidationError, DAY, SECOND,
};
use crate::resilience::{plan_migration, MigrationOutcome, RestoreModel};

pub use config::{ConfigError, CoordinatorConfig, SchedulerConfig, MISS_THRESHOLD};
pub use events::{replay, Event, EventLogEntry, ReplayError};
pub use monitoring::MonitoringStore;
pub use placement::{OwnershipPolicy, Placement, PlacementPolicy, ScoringPolicy};
pub use protocol::{
    DepartureKind, DepartureNotice, DeparturePhase, Directive, Heartbeat, HeartbeatAck,
    RegisterRequest, RegisterResponse, WorkloadPhase, WorkloadReport,
};
pub use queue::PendingQueue;
pub use state::{CoordinatorState, Counters};
pub use store::{EventStore, FileEventStore, MemoryEventStore, NullEventStore, SharedEventStore};
pub use views::{ClusterSummary, NodeView};
pub use volatility::{ewma_step, VolatilityEvent};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoordError {
    #[error("unauthorized")]
    Unauthorized,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("stale heartbeat sequence {got} (last {last})")]
    StaleSequence { last: u64, got: u64 },
    #[error("node {0} is already active")]
    DuplicateActiveNode(NodeId),
    #[error("registration has no GPUs")]
    EmptyGpuList,
    #[error("invalid node descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("node {0} has departed; register again")]
    NodeDeparted(NodeId),
    #[error("validation failed: {0}")]
    ValidationFailed(#[from] ValidationError),
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
}

impl CoordError {
    pub fn code(&self) -> &'static str {
        match self {
            CoordError::Unauthorized => "Unauthorized",
            CoordError::UnknownNode(_) => "UnknownNode",
            CoordError::UnknownJob(_) => "NotFound",
            CoordError::StaleSequence { .. } => "StaleSequence",
            CoordError::DuplicateActiveNode(_) => "DuplicateActiveNode",
            CoordError::EmptyGpuList => "EmptyGpuList",
            CoordError::InvalidDescriptor(_) => "InvalidDescriptor",
            CoordError::NodeDeparted(_) => "NodeDeparted",
            CoordError::ValidationFailed(v) => v.code(),
            CoordError::IllegalTransition(_) => "IllegalTransition",
        }
    }
}

/// What happens to one job displaced by a departure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlannedStep {
    /// Graceful drain in progress; the job moves after its final checkpoint.
    AwaitingCheckpoint,
    Migrate(MigrationOutcome),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedMigration {
    pub job: JobId,
    pub step: PlannedStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationPlan {
    pub node: NodeId,
    pub jobs: Vec<PlannedMigration>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickReport {
    pub unavailable: Vec<NodeId>,
    pub departed: Vec<NodeId>,
    pub allocations: Vec<Allocation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlOutcome {
    pub state: NodeState,
    pub changed: bool,
}

pub struct Coordinator {
    config: SchedulerConfig,
    allow_list: BTreeSet<String>,
    state: CoordinatorState,
    store: Box<dyn EventStore>,
    recent: VecDeque<EventLogEntry>,
    recent_cap: usize,
    clock: Arc<dyn Clock>,
    rng: ChaCha20Rng,
    policy: Box<dyn PlacementPolicy>,
    restore_model: RestoreModel,
    monitoring: MonitoringStore,
}

impl Coordinator {
    pub fn new(config: CoordinatorConfig, clock: Arc<dyn Clock>) -> Result<Self, ConfigError> {
        config.validate()?;
        let policy = ScoringPolicy {
            weight_volatility: config.scheduler.weight_volatility,
            weight_latency: config.scheduler.weight_latency,
        };
        Ok(Self {
            config: config.scheduler,
            allow_list: config.allow_list,
            state: CoordinatorState::default(),
            store: Box::new(MemoryEventStore::default()),
            recent: VecDeque::new(),
            recent_cap: 1024,
            clock,
            rng: ChaCha20Rng::from_os_rng(),
            policy: Box::new(policy),
            restore_model: RestoreModel::default(),
            monitoring: MonitoringStore::default(),
        })
    }

    /// Rebuilds state from `store` and keeps appending to it.
    pub fn recover(
        config: CoordinatorConfig,
        clock: Arc<dyn Clock>,
        store: Box<dyn EventStore>,
    ) -> Result<Self, RecoverError> {
        let entries = store.load()?;
        let state = replay(entries.iter().cloned())?;
        let mut c = Self::new(config, clock)?;
        c.recent = entries.into_iter().rev().take(c.recent_cap).rev().collect();
        c.state = state;
        c.store = store;
        Ok(c)
    }

    pub fn with_store(mut self, store: Box<dyn EventStore>) -> Self {
        self.store = store;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha20Rng::seed_from_u64(seed);
        self
    }

    pub fn with_policy(mut self, policy: Box<dyn PlacementPolicy>) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_restore_model(mut self, model: RestoreModel) -> Self {
        self.restore_model = model;
        self
    }

    /// Size of the in-memory recent-event ring (0 disables it).
    pub fn with_recent_capacity(mut self, cap: usize) -> Self {
        self.recent_cap = cap;
        self.recent.truncate(cap);
        self
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn state(&self) -> &CoordinatorState {
        &self.state
    }

    pub fn monitoring(&self) -> &MonitoringStore {
        &self.monitoring
    }

    pub fn now(&self) -> Millis {
        self.clock.now()
    }

    fn emit(&mut self, payload: Event, at: Millis) {
        let entry = EventLogEntry { seq: self.state.last_seq + 1, at, payload };
        if let Err(e) = self.state.apply(&entry) {
            panic!("coordinator decided an inapplicable event {:?}: {e}", entry.payload);
        }
        if let Err(e) = self.store.append(&entry) {
            tracing::error!(seq = entry.seq, error = %e, "event log append failed");
        }
        if self.recent_cap > 0 {
            if self.recent.len() == self.recent_cap {
                self.recent.pop_front();
            }
            self.recent.push_back(entry);
        }
    }

    /// Recent events with `seq > since`, oldest first.
    pub fn recent_events(&self, since: u64, limit: usize) -> Vec<EventLogEntry> {
        self.recent.iter().filter(|e| e.seq > since).take(limit).cloned().collect()
    }

    fn node(&self, id: NodeId) -> Result<&NodeRecord, CoordError> {
        self.state.nodes.get(&id).ok_or(CoordError::UnknownNode(id))
    }

    fn job(&self, id: JobId) -> Result<&JobRecord, CoordError> {
        self.state.jobs.get(&id).ok_or(CoordError::UnknownJob(id))
    }

    fn transition_node(&mut self, id: NodeId, event: NodeEvent, reason: &str, at: Millis) -> Result<NodeState, CoordError> {
        let from = self.node(id)?.state;
        let to = from.transition(event)?;
        self.emit(Event::NodeStateChanged { node: id, from, to, reason: reason.to_string() }, at);
        Ok(to)
    }

    fn transition_job(&mut self, id: JobId, event: JobEvent, reason: &str, at: Millis) -> Result<JobState, CoordError> {
        let from = self.job(id)?.state;
        let to = from.transition(event)?;
        self.emit(Event::JobStateChanged { job: id, from, to, reason: reason.to_string() }, at);
        Ok(to)
    }

    fn authorize(&self, id: NodeId, token: &str) -> Result<&NodeRecord, CoordError> {
        let node = self.node(id)?;
        if node.auth_token_hash != sha256_hex(token.as_bytes()) {
            return Err(CoordError::Unauthorized);
        }
        Ok(node)
    }

    // ---- node lifecycle ----

    pub fn register_node(&mut self, req: RegisterRequest) -> Result<RegisterResponse, CoordError> {
        let now = self.now();
        if req.gpus.is_empty() {
            return Err(CoordError::EmptyGpuList);
        }
        let mut seen = BTreeSet::new();
        for g in &req.gpus {
            g.validate().map_err(CoordError::InvalidDescriptor)?;
            if !seen.insert(g.index) {
                return Err(CoordError::InvalidDescriptor(format!("duplicate gpu index {}", g.index)));
            }
        }
        if !(req.latency_ms.is_finite() && req.latency_ms >= 0.0) {
            return Err(CoordError::InvalidDescriptor("latency_ms must be a nonnegative number".into()));
        }
        let id = match req.prior_id {
            Some(id) => id,
            None => loop {
                let id = NodeId::generate(&mut self.rng);
                if !self.state.nodes.contains_key(&id) {
                    break id;
                }
            },
        };
        let mut token_bytes = [0u8; 32];
        self.rng.fill_bytes(&mut token_bytes);
        let token = hex::encode(token_bytes);

        let previous = self.state.nodes.get(&id).cloned();
        let mut record = NodeRecord::new(id, req.gpus, req.latency_ms, self.config.volatility_prior, now);
        record.auth_token_hash = sha256_hex(token.as_bytes());
        let activation = match previous {
            None => NodeEvent::Activate,
            Some(prev) => {
                let event = match prev.state {
                    NodeState::Departed => {
                        self.transition_node(id, NodeEvent::Rejoin, "rejoin", now)?;
                        NodeEvent::Activate
                    }
                    NodeState::Registering => NodeEvent::Activate,
                    NodeState::Unavailable => NodeEvent::Reconnect,
                    NodeState::Active | NodeState::Paused | NodeState::Draining => {
                        return Err(CoordError::DuplicateActiveNode(id))
                    }
                };
                record.state = self.state.nodes[&id].state;
                record.volatility_score = prev.volatility_score;
                record.interruptions_today = prev.interruptions_today;
                record.missed_heartbeats = prev.missed_heartbeats;
                event
            }
        };
        self.emit(Event::NodeRegistered { node: record }, now);
        self.transition_node(id, activation, "registered", now)?;
        Ok(RegisterResponse { node_id: id, token })
    }

    /// Validates and records a heartbeat, its telemetry, checkpoint manifests
    /// and workload reports.
    pub fn process_heartbeat(&mut self, msg: &Heartbeat, token: &str) -> Result<(), CoordError> {
        let now = self.now();
        let id = msg.node_id;
        let node = self.authorize(id, token)?;
        if matches!(node.state, NodeState::Departed | NodeState::Registering) {
            return Err(CoordError::NodeDeparted(id));
        }
        if msg.seq <= node.last_heartbeat_seq {
            return Err(CoordError::StaleSequence { last: node.last_heartbeat_seq, got: msg.seq });
        }
        let mut advertised_changed = msg.advertised != node.advertised;
        if node.state == NodeState::Unavailable {
            self.transition_node(id, NodeEvent::Reconnect, "reconnect", now)?;
            advertised_changed = true;
        }
        self.emit(
            Event::HeartbeatAccepted { node: id, seq: msg.seq, advertised: msg.advertised, latency_ms: msg.latency_ms },
            now,
        );
        if advertised_changed {
            match (self.state.nodes[&id].state, msg.advertised) {
                (NodeState::Active, AdvertisedState::Paused) => {
                    self.transition_node(id, NodeEvent::Pause, "provider paused", now)?;
                }
                (NodeState::Paused, AdvertisedState::Active) => {
                    self.transition_node(id, NodeEvent::Resume, "provider resumed", now)?;
                }
                _ => {}
            }
        }
        for t in &msg.telemetry {
            let valid = t.node == id
                && self.state.nodes[&id].gpu(t.gpu_index).is_some_and(|g| t.validate_against(g).is_ok());
            if valid {
                self.monitoring.record(t.clone());
            }
        }
        self.record_checkpoints(id, &msg.checkpoints, now);
        for r in &msg.workloads {
            self.apply_report(id, r, now);
        }
        let reported: BTreeSet<JobId> = msg.workloads.iter().map(|r| r.job_id).collect();
        let missing: Vec<JobId> = self
            .state
            .jobs_on(id)
            .filter(|j| matches!(j.state, JobState::Running | JobState::Checkpointing))
            .filter(|j| !reported.contains(&j.id))
            .map(|j| j.id)
            .collect();
        for job in missing {
            self.displace(job, id, "workload missing on node", now);
        }
        Ok(())
    }

    /// Full poll round: heartbeat processing, a scheduling pass, and the
    /// directives this node should act on.
    pub fn heartbeat_round(&mut self, msg: &Heartbeat, token: &str) -> Result<HeartbeatAck, CoordError> {
        self.process_heartbeat(msg, token)?;
        let now = self.now();
        self.schedule_tick(now);
        Ok(HeartbeatAck { ack: true, directives: self.directives_for(msg.node_id, &msg.workloads) })
    }

    fn record_checkpoints(&mut self, node: NodeId, manifests: &[CheckpointManifest], now: Millis) {
        for m in manifests {
            let Some(job) = self.state.jobs.get(&m.job_id) else { continue };
            let on_node = job.state.holds_allocation() && job.allocation.as_ref().is_some_and(|a| a.node_id == node);
            let newer = job.latest_checkpoint().is_none_or(|l| m.seq > l.seq);
            if on_node && newer {
                self.emit(Event::CheckpointRecorded { manifest: m.clone() }, now);
            }
        }
    }

    fn apply_report(&mut self, node: NodeId, r: &WorkloadReport, now: Millis) {
        let Some(job) = self.state.jobs.get(&r.job_id) else { return };
        let on_node = job.state.holds_allocation() && job.allocation.as_ref().is_some_and(|a| a.node_id == node);
        if !on_node {
            self.try_adopt(node, r, now);
            return;
        }
        let id = r.job_id;
        let state = job.state;
        let step = |c: &mut Self, e: JobEvent, reason: &str| {
            // Reports only drive legal transitions; anything else is ignored.
            let _ = c.transition_job(id, e, reason, now);
        };
        match (state, r.phase) {
            (JobState::Scheduled, WorkloadPhase::Running) => step(self, JobEvent::Start, "started"),
            (JobState::Scheduled, WorkloadPhase::Checkpointing) => {
                step(self, JobEvent::Start, "started");
                step(self, JobEvent::BeginCheckpoint, "checkpointing");
            }
            (JobState::Running, WorkloadPhase::Checkpointing) => step(self, JobEvent::BeginCheckpoint, "checkpointing"),
            (JobState::Checkpointing, WorkloadPhase::Running) => step(self, JobEvent::EndCheckpoint, "checkpointed"),
            (_, WorkloadPhase::Exited { code: 0 }) => {
                if state == JobState::Scheduled {
                    step(self, JobEvent::Start, "started");
                }
                if state == JobState::Checkpointing {
                    step(self, JobEvent::EndCheckpoint, "checkpointed");
                }
                step(self, JobEvent::Complete, "exit code 0");
            }
            (_, WorkloadPhase::Exited { code }) => {
                let reason = r.error.clone().unwrap_or_else(|| format!("exit code {code}"));
                step(self, JobEvent::Fail, &reason);
            }
            (JobState::Running | JobState::Checkpointing, WorkloadPhase::Stopped) => {
                self.displace(id, node, "stopped on provider", now);
            }
            _ => {}
        }
    }

    /// A workload still running on a reconnected node is taken back when its
    /// job waits in the queue with a live affinity tag for that node.
    fn try_adopt(&mut self, node: NodeId, r: &WorkloadReport, now: Millis) {
        if !matches!(r.phase, WorkloadPhase::Running | WorkloadPhase::Checkpointing) || r.gpu_indices.len() != 1 {
            return;
        }
        let job = &self.state.jobs[&r.job_id];
        let tag_ok = job.state == JobState::Pending && job.affinity.is_some_and(|t| t.node == node && t.is_live(now));
        let Some(n) = self.state.nodes.get(&node) else { return };
        let gpu = r.gpu_indices[0];
        let gpu_ok = n.state.accepts_work()
            && n.gpu(gpu).is_some_and(|g| placement::fits(job, g))
            && !self.state.used_gpus(node).contains(&gpu);
        if tag_ok && gpu_ok {
            self.grant(r.job_id, Placement { node, gpu_index: gpu, via_affinity: true }, now);
        }
    }

    fn grant(&mut self, job: JobId, p: Placement, now: Millis) -> Allocation {
        let allocation = Allocation { job_id: job, node_id: p.node, gpu_indices: vec![p.gpu_index], granted_at: now };
        let displaced_from = self.state.jobs[&job].displaced_from;
        self.emit(Event::AllocationGranted { allocation: allocation.clone(), via_affinity: p.via_affinity }, now);
        if let Some(origin) = displaced_from {
            self.emit(Event::MigrationCompleted { job, to: p.node, returned: p.via_affinity && origin == p.node }, now);
        }
        allocation
    }

    /// Marks nodes silent for three heartbeat intervals as unavailable and
    /// displaces their jobs. Returns the newly unavailable nodes.
    pub fn detect_failures(&mut self, now: Millis) -> Vec<NodeId> {
        self.detect(now).0
    }

    fn detect(&mut self, now: Millis) -> (Vec<NodeId>, Vec<NodeId>) {
        let interval = self.config.heartbeat_interval();
        let mut unavailable = Vec::new();
        let mut departed = Vec::new();
        let ids: Vec<NodeId> = self.state.nodes.keys().copied().collect();
        for id in ids {
            let n = &self.state.nodes[&id];
            let silent = now.saturating_sub(n.last_heartbeat_at);
            if n.state.is_monitored() {
                let missed = (silent / interval).min(u64::from(MISS_THRESHOLD)) as u32;
                if missed > n.missed_heartbeats {
                    self.emit(Event::HeartbeatMissed { node: id, missed }, now);
                }
                if missed == MISS_THRESHOLD {
                    self.fail_node(id, "heartbeat-loss", now);
                    unavailable.push(id);
                }
            } else if n.state == NodeState::Draining {
                let grace = n.drain_requested.map_or(self.config.grace_default_s, |d| d.grace_s);
                if silent >= u64::from(MISS_THRESHOLD) * interval + grace * SECOND {
                    self.depart(id, "drain timed out", now);
                    departed.push(id);
                }
            }
        }
        (unavailable, departed)
    }

    fn fail_node(&mut self, id: NodeId, reason: &str, now: Millis) {
        if self.state.nodes[&id].missed_heartbeats < MISS_THRESHOLD {
            self.emit(Event::HeartbeatMissed { node: id, missed: MISS_THRESHOLD }, now);
        }
        if self.transition_node(id, NodeEvent::HeartbeatLoss, reason, now).is_ok() {
            self.note_interruption(id, now);
            self.displace_all(id, reason, now);
        }
    }

    fn depart(&mut self, id: NodeId, reason: &str, now: Millis) -> Vec<PlannedMigration> {
        let plan = self.displace_all(id, reason, now);
        let _ = self.transition_node(id, NodeEvent::Depart, reason, now);
        plan
    }

    fn note_interruption(&mut self, id: NodeId, now: Millis) {
        let n = &self.state.nodes[&id];
        let (score, count) = (n.volatility_score, n.interruptions_today + 1);
        self.emit(Event::VolatilityUpdated { node: id, volatility_score: score, interruptions_today: count }, now);
    }

    fn displace_all(&mut self, node: NodeId, reason: &str, now: Millis) -> Vec<PlannedMigration> {
        let jobs: Vec<JobId> = self.state.jobs_on(node).map(|j| j.id).collect();
        jobs.into_iter()
            .map(|job| PlannedMigration { job, step: PlannedStep::Migrate(self.displace(job, node, reason, now)) })
            .collect()
    }

    fn displace(&mut self, job: JobId, from: NodeId, reason: &str, now: Millis) -> MigrationOutcome {
        let window_s = match self.state.jobs[&job].spec.affinity_window_s {
            0 => self.config.affinity_window_default_s,
            w => w,
        };
        let affinity = AffinityTag { node: from, expires_at: now + window_s * SECOND };
        self.emit(Event::MigrationStarted { job, from, reason: reason.to_string(), affinity }, now);
        let record = &self.state.jobs[&job];
        let outcome = plan_migration(
            record,
            &self.state,
            self.policy.as_ref(),
            now,
            &self.restore_model,
            self.config.heartbeat_interval() / 2,
        );
        match &outcome {
            MigrationOutcome::Reschedule { node, gpu_index, via_affinity, .. } => {
                self.grant(job, Placement { node: *node, gpu_index: *gpu_index, via_affinity: *via_affinity }, now);
            }
            MigrationOutcome::Requeue { stateless } => {
                let reason = if *stateless { "requeued without checkpoint" } else { "requeued" };
                let _ = self.transition_job(job, JobEvent::Requeue, reason, now);
            }
            MigrationOutcome::Lost => {
                let _ = self.transition_job(job, JobEvent::Lose, "interactive session without checkpoint", now);
            }
        }
        outcome
    }

    /// Places pending jobs in queue order. Jobs that fit nowhere stay pending.
    pub fn schedule_tick(&mut self, now: Millis) -> Vec<Allocation> {
        let queue = PendingQueue::from_jobs(self.state.jobs.values());
        let mut granted = Vec::new();
        let mut free = self.state.has_free_gpu();
        for id in queue.iter() {
            if !free {
                break;
            }
            let placement = self.policy.place(&self.state.jobs[&id], &self.state, now);
            if let Some(p) = placement {
                granted.push(self.grant(id, p, now));
                free = self.state.has_free_gpu();
            }
        }
        granted
    }

    /// Periodic scheduler-loop work: volatility day rollover, failure
    /// detection, and a scheduling pass.
    pub fn tick(&mut self, now: Millis) -> TickReport {
        self.roll_days(now);
        let (unavailable, departed) = self.detect(now);
        let allocations = self.schedule_tick(now);
        TickReport { unavailable, departed, allocations }
    }

    fn roll_days(&mut self, now: Millis) {
        let day = now / DAY;
        if day <= self.state.day {
            return;
        }
        let elapsed = day - self.state.day;
        let alpha = self.config.volatility_alpha;
        let ids: Vec<NodeId> = self.state.nodes.keys().copied().collect();
        for id in ids {
            let n = &self.state.nodes[&id];
            // The first elapsed day carries the recorded count, the rest had none.
            let mut score = ewma_step(n.volatility_score, n.interruptions_today, alpha);
            for _ in 1..elapsed.min(10_000) {
                score = ewma_step(score, 0, alpha);
            }
            self.emit(Event::VolatilityUpdated { node: id, volatility_score: score, interruptions_today: 0 }, now);
        }
        self.emit(Event::DayRolled { day }, now);
    }

    pub fn update_volatility(&mut self, node: NodeId, event: VolatilityEvent) -> Result<f64, CoordError> {
        let now = self.now();
        let n = self.node(node)?;
        match event {
            VolatilityEvent::Interruption => self.note_interruption(node, now),
            VolatilityEvent::DayElapsed => {
                let score = ewma_step(n.volatility_score, n.interruptions_today, self.config.volatility_alpha);
                self.emit(Event::VolatilityUpdated { node, volatility_score: score, interruptions_today: 0 }, now);
            }
        }
        Ok(self.state.nodes[&node].volatility_score)
    }

    // ---- departures and provider controls ----

    pub fn handle_departure(&mut self, node: NodeId, kind: DepartureKind, grace_s: u64) -> Result<MigrationPlan, CoordError> {
        let now = self.now();
        self.node(node)?;
        let jobs = match kind {
            DepartureKind::Graceful => self.begin_drain(node, grace_s, now)?,
            DepartureKind::Emergency => self.emergency_departure(node, now),
        };
        Ok(MigrationPlan { node, jobs })
    }

    fn begin_drain(&mut self, node: NodeId, grace_s: u64, now: Millis) -> Result<Vec<PlannedMigration>, CoordError> {
        let state = self.node(node)?.state;
        if state != NodeState::Draining {
            self.transition_node(node, NodeEvent::Drain, "drain", now)?;
            self.emit(Event::DrainRequested { node, grace_s }, now);
            self.note_interruption(node, now);
        }
        let running: Vec<JobId> = self.state.jobs_on(node).map(|j| j.id).collect();
        for &job in &running {
            if !self.state.jobs[&job].checkpoint_requested {
                self.emit(Event::CheckpointRequested { job, requested: true }, now);
            }
        }
        Ok(running.into_iter().map(|job| PlannedMigration { job, step: PlannedStep::AwaitingCheckpoint }).collect())
    }

    fn complete_drain(&mut self, node: NodeId, grace_s: u64, now: Millis) -> Result<Vec<PlannedMigration>, CoordError> {
        match self.node(node)?.state {
            NodeState::Active | NodeState::Paused => {
                self.begin_drain(node, grace_s, now)?;
            }
            NodeState::Draining => {}
            _ => return Ok(Vec::new()),
        }
        Ok(self.depart(node, "graceful departure", now))
    }

    fn emergency_departure(&mut self, node: NodeId, now: Millis) -> Vec<PlannedMigration> {
        match self.state.nodes[&node].state {
            s if s.is_monitored() => {
                let plan_jobs: Vec<JobId> = self.state.jobs_on(node).map(|j| j.id).collect();
                self.fail_node(node, "emergency departure", now);
                plan_jobs
                    .into_iter()
                    .map(|job| PlannedMigration { job, step: PlannedStep::Migrate(self.migration_state(job)) })
                    .collect()
            }
            NodeState::Draining => self.depart(node, "emergency departure", now),
            _ => Vec::new(),
        }
    }

    fn migration_state(&self, job: JobId) -> MigrationOutcome {
        let j = &self.state.jobs[&job];
        match (j.state, &j.allocation) {
            (JobState::Lost, _) => MigrationOutcome::Lost,
            (_, Some(a)) => MigrationOutcome::Reschedule {
                node: a.node_id,
                gpu_index: a.gpu_indices[0],
                via_affinity: false,
                manifests: j.checkpoints.clone(),
                estimated_downtime_ms: 0,
            },
            _ => MigrationOutcome::Requeue { stateless: j.checkpoints.is_empty() },
        }
    }

    /// Departure notice sent by an agent (drain or kill-switch).
    pub fn departure_notice(&mut self, node: NodeId, token: &str, notice: &DepartureNotice) -> Result<MigrationPlan, CoordError> {
        let now = self.now();
        self.authorize(node, token)?;
        self.record_checkpoints(node, &notice.checkpoints, now);
        let jobs = match (notice.kind, notice.phase) {
            (DepartureKind::Graceful, DeparturePhase::Started) => self.begin_drain(node, notice.grace_s, now)?,
            (DepartureKind::Graceful, DeparturePhase::Completed) => self.complete_drain(node, notice.grace_s, now)?,
            (DepartureKind::Emergency, _) => self.emergency_departure(node, now),
        };
        Ok(MigrationPlan { node, jobs })
    }

    pub fn pause_node(&mut self, node: NodeId) -> Result<ControlOutcome, CoordError> {
        self.control(node, NodeState::Paused, NodeEvent::Pause)
    }

    pub fn resume_node(&mut self, node: NodeId) -> Result<ControlOutcome, CoordError> {
        self.control(node, NodeState::Active, NodeEvent::Resume)
    }

    fn control(&mut self, node: NodeId, target: NodeState, event: NodeEvent) -> Result<ControlOutcome, CoordError> {
        let now = self.now();
        let state = self.node(node)?.state;
        if state == target {
            return Ok(ControlOutcome { state, changed: false });
        }
        let state = self.transition_node(node, event, "operator request", now)?;
        Ok(ControlOutcome { state, changed: true })
    }

    /// Coordinator-initiated drain; the agent receives a drain directive on
    /// its next heartbeat.
    pub fn drain_node(&mut self, node: NodeId, grace_s: Option<u64>) -> Result<MigrationPlan, CoordError> {
        let grace = grace_s.unwrap_or(self.config.grace_default_s);
        self.handle_departure(node, DepartureKind::Graceful, grace)
    }

    /// Queues a kill-switch request for delivery on the node's next heartbeat.
    pub fn request_kill(&mut self, node: NodeId, grace_s: u64) -> Result<ControlOutcome, CoordError> {
        let now = self.now();
        let state = self.node(node)?.state;
        if matches!(state, NodeState::Departed | NodeState::Registering) {
            return Err(IllegalTransition::new(state, "Kill").into());
        }
        self.emit(Event::KillRequested { node, grace_s }, now);
        Ok(ControlOutcome { state, changed: true })
    }

    /// Directives for `node` given the workloads it just reported.
    pub fn directives_for(&self, node: NodeId, reported: &[WorkloadReport]) -> Vec<Directive> {
        let Some(n) = self.state.nodes.get(&node) else { return Vec::new() };
        if let Some(k) = n.kill_requested {
            return vec![Directive::Kill { grace_s: k.grace_s }];
        }
        let mut out = Vec::new();
        let by_job: BTreeMap<JobId, &WorkloadReport> = reported.iter().map(|r| (r.job_id, r)).collect();
        for r in reported {
            if matches!(r.phase, WorkloadPhase::Exited { .. }) {
                continue;
            }
            let allocated = self.state.jobs.get(&r.job_id).is_some_and(|j| {
                j.state.holds_allocation() && j.allocation.as_ref().is_some_and(|a| a.node_id == node)
            });
            if !allocated {
                out.push(Directive::Terminate { job_id: r.job_id, grace_s: 0 });
            }
        }
        for j in self.state.jobs_on(node) {
            match by_job.get(&j.id) {
                None if j.state == JobState::Scheduled => out.push(Directive::Launch {
                    job_id: j.id,
                    spec: j.spec.clone(),
                    gpu_indices: j.allocation.as_ref().map(|a| a.gpu_indices.clone()).unwrap_or_default(),
                    restore_from: j.latest_checkpoint().cloned(),
                }),
                Some(r) if j.checkpoint_requested && r.phase == WorkloadPhase::Running => {
                    out.push(Directive::Checkpoint { job_id: j.id })
                }
                _ => {}
            }
        }
        match (n.state, n.advertised) {
            (NodeState::Draining, _) => {
                if let Some(d) = n.drain_requested {
                    out.push(Directive::Drain { grace_s: d.grace_s });
                }
            }
            (NodeState::Paused, AdvertisedState::Active) => out.push(Directive::Pause),
            (NodeState::Active, AdvertisedState::Paused) => out.push(Directive::Resume),
            _ => {}
        }
        out
    }

    // ---- jobs ----

    pub fn enqueue_job(&mut self, spec: JobSpec) -> Result<JobId, CoordError> {
        let now = self.now();
        validate_job_spec(&spec, &self.allow_list)?;
        let id = JobId(self.state.next_job_id);
        let job = JobRecord {
            id,
            spec,
            state: JobState::Pending,
            enqueue_seq: self.state.next_enqueue_seq,
            submitted_at: now,
            allocation: None,
            history: Vec::new(),
            affinity: None,
            displaced_from: None,
            displacements: 0,
            checkpoints: Vec::new(),
            checkpoint_requested: false,
            last_reason: None,
        };
        self.emit(Event::JobEnqueued { job }, now);
        Ok(id)
    }

    pub fn cancel_job(&mut self, id: JobId) -> Result<JobState, CoordError> {
        let now = self.now();
        self.job(id)?;
        self.transition_job(id, JobEvent::Cancel, "cancelled", now)
    }

    pub fn get_job(&self, id: JobId) -> Result<&JobRecord, CoordError> {
        self.job(id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &JobRecord> {
        self.state.jobs.values()
    }

    pub fn nodes(&self) -> Vec<NodeView> {
        self.state.nodes.values().map(|n| NodeView::new(n, &self.state)).collect()
    }

    pub fn summary(&self) -> ClusterSummary {
        ClusterSummary::new(&self.state)
    }

    /// Plain-text metrics exposition.
    pub fn metrics_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let c = &self.state.counters;
        out.push_str("# TYPE gpu_util_pct gauge\n");
        for t in self.monitoring.latest() {
            let _ = writeln!(out, "gpu_util_pct{{node=\"{}\",gpu=\"{}\"}} {}", t.node, t.gpu_index, t.util_pct);
        }
        let running = self.state.jobs.values().filter(|j| j.state == JobState::Running).count();
        let _ = writeln!(out, "# TYPE jobs_running gauge\njobs_running {running}");
        let pending = self.state.jobs.values().filter(|j| j.state == JobState::Pending).count();
        let _ = writeln!(out, "# TYPE jobs_pending gauge\njobs_pending {pending}");
        let _ = writeln!(out, "# TYPE migrations_total counter\nmigrations_total {}", c.migrations_total);
        let _ = writeln!(out, "# TYPE heartbeat_misses_total counter\nheartbeat_misses_total {}", c.heartbeat_misses_total);
        let _ = writeln!(out, "# TYPE checkpoint_bytes_total counter\ncheckpoint_bytes_total {}", c.checkpoint_bytes_total);
        out.push_str("# TYPE nodes gauge\n");
        for (state, count) in self.summary().nodes_by_state {
            let _ = writeln!(out, "nodes{{state=\"{state}\"}} {count}");
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RecoverError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
