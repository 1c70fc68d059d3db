use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io;
use std::sync::{Arc, Mutex};

use rand_distr::{Distribution, Exp};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    Agent, AgentEvent, AgentSettings, SimulatedProbe, SimulatedRegistry, SimulatedRuntime, WorkloadCatalog,
    WorkloadProfile,
};
use crate::clock::{Clock, ManualClock};
use crate::coordinator::{
    CoordError, Coordinator, CoordinatorConfig, Event, EventLogEntry, EventStore, OwnershipPolicy, ReplayError,
    SchedulerConfig,
};
use crate::domain::{
    ComputeCapability, GpuDescriptor, InterruptionEvent, InterruptionKind, JobId, JobState, Millis, NodeId, SECOND,
};
use crate::resilience::{MemoryCheckpointStore, RestoreModel};

use super::config::{InvalidConfig, SimConfig};
use super::storage::{Reachability, StorageView};
use super::trace::{generate_trace, sim_node_id, stream, STREAM_OFFLINE, STREAM_PHASE};

/// Coordinator event store that hands entries to the simulator.
#[derive(Clone, Default)]
struct Tap(Arc<Mutex<Vec<EventLogEntry>>>);

impl EventStore for Tap {
    fn append(&mut self, entry: &EventLogEntry) -> io::Result<()> {
        self.0.lock().expect("tap lock").push(entry.clone());
        Ok(())
    }

    fn load(&self) -> Result<Vec<EventLogEntry>, ReplayError> {
        Ok(Vec::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Tick,
    Arrival(usize),
    Interrupt(usize),
    Reconnect(usize),
    Rejoin(usize),
    Heartbeat(usize),
    Wake(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Normal,
    Draining,
    Away,
}

struct SimNodeRt {
    id: NodeId,
    agent: Agent,
    phase: Phase,
    /// Machine running (the agent process exists).
    up: bool,
    /// Network reachable.
    online: bool,
    wake_at: Option<Millis>,
    /// Most recent interruption: kind label and start time.
    last_interruption: Option<(&'static str, Millis)>,
}

/// One container instance of a job, as observed from agent events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub node: NodeId,
    pub launched_at: Millis,
    pub progress_from: Millis,
    pub restored_progress: Millis,
    pub restore_cost_ms: Millis,
    pub restore_bytes: u64,
    /// Time and progress at which the container stopped, if it did.
    pub ended: Option<(Millis, Millis)>,
    pub exited_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub job: JobId,
    pub from: NodeId,
    pub at: Millis,
    pub kind: String,
    pub interruption_at: Option<Millis>,
    /// Grant time and whether it returned the job to `from` via affinity.
    pub completed: Option<(Millis, bool)>,
    /// Node of the grant that ended the displacement.
    pub resumed_on: Option<NodeId>,
}

/// Bytes moved between a node and checkpoint storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub at: Millis,
    pub bytes: u64,
    pub duration_ms: Millis,
    pub restore: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobMeta {
    pub job: JobId,
    pub workload: String,
    pub arrival: Millis,
    pub duration_ms: Millis,
    pub final_state: JobState,
}

/// Everything observed during one simulated run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub jobs: BTreeMap<JobId, JobMeta>,
    pub runs: BTreeMap<JobId, Vec<Run>>,
    pub displacements: Vec<Displacement>,
    /// Final checkpoints written, per job.
    pub final_checkpoints: BTreeMap<JobId, Vec<Millis>>,
    pub transfers: Vec<Transfer>,
    pub interruptions_applied: BTreeMap<String, u64>,
    pub interruptions_skipped: u64,
    pub end: Millis,
    pub total_gpus: u64,
    pub node_names: BTreeMap<NodeId, String>,
    pub coordinator_events: u64,
}

/// Rows of the CSV event trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t_ms: Millis,
    pub source: String,
    pub node: String,
    pub job: String,
    pub event: String,
    pub detail: String,
}

pub(crate) enum PolicyChoice {
    Scoring,
    Ownership,
}

struct World<'a> {
    cfg: &'a SimConfig,
    clock: ManualClock,
    coord: Coordinator,
    tap: Tap,
    nodes: Vec<SimNodeRt>,
    reach: Reachability,
    heap: BinaryHeap<Reverse<(Millis, u64, Ev)>>,
    seq: u64,
    trace: Vec<InterruptionEvent>,
    arrivals: Vec<(Millis, usize)>,
    expected_ids: Vec<JobId>,
    offline_rng: Vec<ChaCha20Rng>,
    offline_dist: Exp<f64>,
    open_jobs: usize,
    arrived: usize,
    obs: Observations,
    rows: Vec<TraceRow>,
}

/// Arrival plan: (time, workload index), ordered by time then config order.
fn arrival_plan(cfg: &SimConfig) -> Vec<(Millis, usize)> {
    let mut plan = Vec::new();
    for (w, wl) in cfg.workloads.iter().enumerate() {
        for k in 0..wl.count as u64 {
            plan.push(((wl.arrival_s + k * wl.arrival_every_s) * SECOND, w));
        }
    }
    plan.sort();
    plan
}

/// Owner map for the static-ownership baseline. Job ids are assigned
/// densely from 0 in arrival order.
fn ownership(cfg: &SimConfig, plan: &[(Millis, usize)]) -> BTreeMap<JobId, NodeId> {
    plan.iter()
        .enumerate()
        .filter_map(|(i, &(_, w))| {
            let owner = cfg.workloads[w].owner.as_ref()?;
            Some((JobId(i as u64), sim_node_id(cfg.node_index(owner)?)))
        })
        .collect()
}

pub(crate) fn simulate(cfg: &SimConfig, policy: PolicyChoice) -> Result<(Observations, Vec<TraceRow>), InvalidConfig> {
    cfg.validate()?;
    let trace = generate_trace(cfg)?;
    let mut world = World::new(cfg, trace, policy)?;
    world.run();
    Ok((world.obs, world.rows))
}

impl<'a> World<'a> {
    fn new(cfg: &'a SimConfig, trace: Vec<InterruptionEvent>, policy: PolicyChoice) -> Result<Self, InvalidConfig> {
        let clock = ManualClock::new(0);
        let shared: Arc<dyn Clock> = Arc::new(clock.clone());
        let scheduler = SchedulerConfig {
            heartbeat_interval_s: cfg.heartbeat_interval_s,
            grace_default_s: cfg.grace_s,
            affinity_window_default_s: cfg.affinity_window_s,
            ..SchedulerConfig::default()
        };
        let restore = RestoreModel { link_bandwidth_mbps: cfg.link_bandwidth_mbps, restore_overhead_s: cfg.restore_overhead_s };
        let tap = Tap::default();
        let plan = arrival_plan(cfg);
        let mut coord = Coordinator::new(CoordinatorConfig { scheduler, allow_list: cfg.allow_list() }, shared.clone())
            .map_err(|e| InvalidConfig(e.to_string()))?
            .with_store(Box::new(tap.clone()))
            .with_recent_capacity(0)
            .with_seed(cfg.seed)
            .with_restore_model(restore);
        if let PolicyChoice::Ownership = policy {
            coord = coord.with_policy(Box::new(OwnershipPolicy { owners: ownership(cfg, &plan) }));
        }

        let mut registry = SimulatedRegistry::default();
        let mut catalog = WorkloadCatalog::default();
        for w in &cfg.workloads {
            registry = registry.with(&w.spec.image_ref, &w.spec.image_digest);
            catalog.profiles.insert(
                w.spec.image_ref.clone(),
                WorkloadProfile {
                    state: w.state,
                    checkpoint_base_s: w.checkpoint_base_s,
                    checkpoint_per_gib_s: w.checkpoint_per_gib_s,
                },
            );
        }
        let store = MemoryCheckpointStore::new();
        let reach = Reachability::default();
        let settings = AgentSettings {
            heartbeat_interval_s: cfg.heartbeat_interval_s,
            grace_s: cfg.grace_s,
            full_every_n: cfg.full_every_n,
            restore,
            ..AgentSettings::default()
        };
        let nodes = cfg
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let id = sim_node_id(i);
                let gpus = (0..n.gpu_count)
                    .map(|g| GpuDescriptor {
                        index: g,
                        model: "simulated".into(),
                        memory_mib: n.memory_mib,
                        compute_capability: ComputeCapability(n.capability.0, n.capability.1),
                    })
                    .collect();
                let runtime = SimulatedRuntime::new(shared.clone(), registry.clone(), catalog.clone(), &n.name);
                let agent = Agent::new(
                    id,
                    gpus,
                    n.latency_ms,
                    shared.clone(),
                    Box::new(runtime),
                    Arc::new(StorageView::new(id, store.clone(), reach.clone())),
                    Box::new(SimulatedProbe),
                    settings.clone(),
                );
                SimNodeRt {
                    id,
                    agent,
                    phase: Phase::Normal,
                    up: true,
                    online: true,
                    wake_at: None,
                    last_interruption: None,
                }
            })
            .collect::<Vec<_>>();
        let offline_dist = Exp::new(1.0 / cfg.offline_duration_dist.mean_s).map_err(|e| InvalidConfig(e.to_string()))?;
        let offline_rng = (0..cfg.nodes.len()).map(|i| stream(cfg.seed, STREAM_OFFLINE, i as u64)).collect();
        let obs = Observations {
            total_gpus: cfg.nodes.iter().map(|n| u64::from(n.gpu_count)).sum(),
            node_names: nodes.iter().zip(&cfg.nodes).map(|(n, c)| (n.id, c.name.clone())).collect(),
            ..Observations::default()
        };
        let expected_ids = (0..plan.len() as u64).map(JobId).collect();
        Ok(Self {
            cfg,
            clock,
            coord,
            tap,
            open_jobs: plan.len(),
            nodes,
            reach,
            heap: BinaryHeap::new(),
            seq: 0,
            trace,
            arrivals: plan,
            expected_ids,
            offline_rng,
            offline_dist,
            arrived: 0,
            obs,
            rows: Vec::new(),
        })
    }

    fn push(&mut self, at: Millis, ev: Ev) {
        self.seq += 1;
        self.heap.push(Reverse((at, self.seq, ev)));
    }

    fn now(&self) -> Millis {
        self.clock.now()
    }

    fn row(&mut self, source: &str, node: Option<NodeId>, job: Option<JobId>, event: &str, detail: String) {
        let node = node.map(|n| self.obs.node_names.get(&n).cloned().unwrap_or_else(|| n.to_string())).unwrap_or_default();
        self.rows.push(TraceRow {
            t_ms: self.now(),
            source: source.to_string(),
            node,
            job: job.map(|j| j.to_string()).unwrap_or_default(),
            event: event.to_string(),
            detail,
        });
    }

    fn run(&mut self) {
        let horizon = self.cfg.sim_duration_s * SECOND;
        let interval = self.cfg.heartbeat_interval_s * SECOND;
        for i in 0..self.nodes.len() {
            self.register(i);
            let phase = stream(self.cfg.seed, STREAM_PHASE, i as u64).random_range(0..interval);
            self.push(phase, Ev::Heartbeat(i));
        }
        self.push(interval, Ev::Tick);
        for k in 0..self.arrivals.len() {
            self.push(self.arrivals[k].0, Ev::Arrival(k));
        }
        for k in 0..self.trace.len() {
            self.push(self.trace[k].at, Ev::Interrupt(k));
        }
        self.collect();
        while let Some(Reverse((t, _, ev))) = self.heap.pop() {
            if t > horizon {
                break;
            }
            self.clock.set(t);
            self.obs.end = t;
            match ev {
                Ev::Tick => {
                    self.coord.tick(t);
                    self.push(t + interval, Ev::Tick);
                }
                Ev::Arrival(k) => self.arrive(k),
                Ev::Interrupt(k) => self.interrupt(k),
                Ev::Reconnect(i) => self.reconnect(i),
                Ev::Rejoin(i) => self.rejoin(i),
                Ev::Heartbeat(i) => {
                    self.push(t + interval, Ev::Heartbeat(i));
                    self.heartbeat(i);
                }
                Ev::Wake(i) => self.wake(i, t),
            }
            self.collect();
            if self.arrived == self.arrivals.len() && self.open_jobs == 0 {
                break;
            }
        }
        if self.open_jobs > 0 {
            self.obs.end = horizon;
        }
        for j in self.obs.jobs.values_mut() {
            j.final_state = self.coord.state().jobs.get(&j.job).map_or(JobState::Pending, |r| r.state);
        }
    }

    fn register(&mut self, i: usize) {
        let req = self.nodes[i].agent.register_request();
        match self.coord.register_node(req) {
            Ok(resp) => self.nodes[i].agent.set_token(resp.token),
            Err(e) => {
                let id = self.nodes[i].id;
                self.row("sim", Some(id), None, "register_failed", e.to_string());
            }
        }
    }

    fn arrive(&mut self, k: usize) {
        let w = self.arrivals[k].1;
        let wl = &self.cfg.workloads[w];
        self.arrived += 1;
        match self.coord.enqueue_job(wl.spec.clone()) {
            Ok(id) => {
                debug_assert_eq!(id, self.expected_ids[k], "job ids follow the arrival plan");
                self.obs.jobs.insert(
                    id,
                    JobMeta {
                        job: id,
                        workload: wl.name.clone(),
                        arrival: self.now(),
                        duration_ms: wl.spec.estimated_duration_s * SECOND,
                        final_state: JobState::Pending,
                    },
                );
            }
            Err(e) => {
                self.open_jobs -= 1;
                let detail = format!("workload {}: {e}", wl.name);
                self.row("sim", None, None, "enqueue_failed", detail);
            }
        }
    }

    fn heartbeat(&mut self, i: usize) {
        let now = self.now();
        let n = &mut self.nodes[i];
        if !n.up {
            return;
        }
        if !n.online {
            n.agent.link_lost();
            n.agent.supervise(now);
            self.refresh_wake(i, now);
            return;
        }
        let Some(hb) = n.agent.build_heartbeat() else { return };
        let token = n.agent.token().unwrap_or_default().to_string();
        match self.coord.heartbeat_round(&hb, &token) {
            Ok(ack) => {
                let results = self.nodes[i].agent.on_ack(&hb, &ack);
                for e in results.into_iter().filter_map(Result::err) {
                    let id = self.nodes[i].id;
                    self.row("agent", Some(id), None, "directive_failed", e.to_string());
                }
            }
            Err(CoordError::Unauthorized | CoordError::NodeDeparted(_)) => {
                self.nodes[i].agent.link_lost();
                self.register(i);
            }
            Err(e) => {
                self.nodes[i].agent.link_lost();
                let id = self.nodes[i].id;
                self.row("agent", Some(id), None, "heartbeat_rejected", e.to_string());
            }
        }
        self.deliver_notices(i);
        self.refresh_wake(i, now);
    }

    fn deliver_notices(&mut self, i: usize) {
        while let Some(notice) = self.nodes[i].agent.take_notice() {
            let id = self.nodes[i].id;
            if !self.nodes[i].online {
                self.row("agent", Some(id), None, "notice_dropped", format!("{:?}", notice.phase));
                continue;
            }
            let token = self.nodes[i].agent.token().unwrap_or_default().to_string();
            if let Err(e) = self.coord.departure_notice(id, &token, &notice) {
                self.row("agent", Some(id), None, "notice_rejected", e.to_string());
            }
        }
    }

    fn wake(&mut self, i: usize, t: Millis) {
        if self.nodes[i].wake_at != Some(t) {
            return;
        }
        self.nodes[i].wake_at = None;
        if self.nodes[i].up {
            self.nodes[i].agent.supervise(t);
            self.deliver_notices(i);
        }
        self.refresh_wake(i, t + 1);
    }

    fn refresh_wake(&mut self, i: usize, earliest: Millis) {
        let n = &self.nodes[i];
        if !n.up {
            return;
        }
        let Some(w) = n.agent.next_wake(earliest) else { return };
        if n.wake_at.is_none_or(|cur| w < cur) {
            self.nodes[i].wake_at = Some(w);
            self.push(w, Ev::Wake(i));
        }
    }

    fn set_online(&mut self, i: usize, online: bool) {
        self.nodes[i].online = online;
        self.reach.set_online(self.nodes[i].id, online);
    }

    fn offline_sample(&mut self, i: usize) -> Millis {
        let s: f64 = self.offline_dist.sample(&mut self.offline_rng[i]);
        ((s * 1000.0).round() as Millis).max(SECOND)
    }

    fn interrupt(&mut self, k: usize) {
        let e = self.trace[k].clone();
        let now = self.now();
        let Some(i) = self.nodes.iter().position(|n| n.id == e.node) else { return };
        let label = e.kind.label();
        if self.nodes[i].phase != Phase::Normal || !self.nodes[i].up {
            self.obs.interruptions_skipped += 1;
            self.row("sim", Some(e.node), None, "interruption_skipped", label.to_string());
            return;
        }
        *self.obs.interruptions_applied.entry(label.to_string()).or_default() += 1;
        self.nodes[i].last_interruption = Some((label, now));
        self.row("sim", Some(e.node), None, "interruption", serde_json::to_string(&e.kind).unwrap_or_default());
        match e.kind {
            InterruptionKind::ScheduledDeparture => {
                self.nodes[i].phase = Phase::Draining;
                self.nodes[i].agent.drain(self.cfg.grace_s);
                self.deliver_notices(i);
                self.refresh_wake(i, now);
            }
            InterruptionKind::EmergencyDeparture => {
                if self.cfg.emergency_notice {
                    self.nodes[i].agent.kill_switch(0, false);
                    self.deliver_notices(i);
                } else {
                    self.nodes[i].agent.crash();
                }
                self.nodes[i].phase = Phase::Away;
                self.nodes[i].up = false;
                self.set_online(i, false);
                let back = now + self.offline_sample(i);
                self.push(back, Ev::Reconnect(i));
            }
            InterruptionKind::TemporaryUnavailability { duration_s } => {
                self.nodes[i].phase = Phase::Away;
                self.set_online(i, false);
                self.nodes[i].agent.link_lost();
                self.push(now + duration_s * SECOND, Ev::Reconnect(i));
            }
        }
    }

    fn reconnect(&mut self, i: usize) {
        let now = self.now();
        let id = self.nodes[i].id;
        self.row("sim", Some(id), None, "reconnect", String::new());
        self.nodes[i].phase = Phase::Normal;
        self.set_online(i, true);
        if !self.nodes[i].up {
            self.nodes[i].up = true;
            self.nodes[i].agent.restart();
        }
        self.heartbeat(i);
        self.refresh_wake(i, now);
    }

    fn rejoin(&mut self, i: usize) {
        let id = self.nodes[i].id;
        self.row("sim", Some(id), None, "rejoin", String::new());
        self.nodes[i].phase = Phase::Normal;
        self.nodes[i].up = true;
        self.set_online(i, true);
        self.nodes[i].agent.restart();
        self.register(i);
        self.heartbeat(i);
    }

    /// Drains coordinator and agent events into observations and the trace.
    fn collect(&mut self) {
        let entries = std::mem::take(&mut *self.tap.0.lock().expect("tap lock"));
        for entry in entries {
            self.observe_coordinator(entry);
        }
        for i in 0..self.nodes.len() {
            let events = self.nodes[i].agent.take_events();
            for e in events {
                self.observe_agent(i, e);
            }
        }
    }

    fn observe_coordinator(&mut self, entry: EventLogEntry) {
        self.obs.coordinator_events += 1;
        let (node, job) = match &entry.payload {
            Event::HeartbeatAccepted { .. } => return,
            Event::MigrationStarted { job, from, .. } => {
                let (kind, interruption_at) = self
                    .nodes
                    .iter()
                    .find(|n| n.id == *from)
                    .and_then(|n| n.last_interruption)
                    .map_or(("none".to_string(), None), |(k, t)| (k.to_string(), Some(t)));
                self.obs.displacements.push(Displacement {
                    job: *job,
                    from: *from,
                    at: entry.at,
                    kind,
                    interruption_at,
                    completed: None,
                    resumed_on: None,
                });
                (Some(*from), Some(*job))
            }
            Event::MigrationCompleted { job, to, returned } => {
                if let Some(d) = self.obs.displacements.iter_mut().rev().find(|d| d.job == *job) {
                    if d.completed.is_none() {
                        d.completed = Some((entry.at, *returned));
                        d.resumed_on = Some(*to);
                    }
                }
                (Some(*to), Some(*job))
            }
            Event::JobStateChanged { job, from, to, .. } => {
                if to.is_terminal() && !from.is_terminal() {
                    self.open_jobs = self.open_jobs.saturating_sub(1);
                }
                (None, Some(*job))
            }
            Event::AllocationGranted { allocation, .. } => (Some(allocation.node_id), Some(allocation.job_id)),
            Event::NodeStateChanged { node, .. }
            | Event::HeartbeatMissed { node, .. }
            | Event::DrainRequested { node, .. }
            | Event::KillRequested { node, .. }
            | Event::VolatilityUpdated { node, .. } => (Some(*node), None),
            Event::NodeRegistered { node } => (Some(node.id), None),
            Event::CheckpointRecorded { manifest } => (None, Some(manifest.job_id)),
            Event::CheckpointRequested { job, .. } => (None, Some(*job)),
            Event::JobEnqueued { job } => (None, Some(job.id)),
            Event::DayRolled { .. } => (None, None),
        };
        let detail = serde_json::to_string(&entry.payload).unwrap_or_default();
        let name = entry.payload.name();
        self.row("coordinator", node, job, name, detail);
    }

    fn observe_agent(&mut self, i: usize, e: AgentEvent) {
        let node = self.nodes[i].id;
        let link = self.cfg.link_bandwidth_mbps;
        let (job, name) = match &e {
            AgentEvent::Launched { job, at, progress_from, restored_progress, restore_bytes, restore_cost_ms, .. } => {
                self.obs.runs.entry(*job).or_default().push(Run {
                    node,
                    launched_at: *at,
                    progress_from: *progress_from,
                    restored_progress: *restored_progress,
                    restore_cost_ms: *restore_cost_ms,
                    restore_bytes: *restore_bytes,
                    ended: None,
                    exited_ok: false,
                });
                if *restore_bytes > 0 {
                    self.obs.transfers.push(Transfer {
                        at: *at,
                        bytes: *restore_bytes,
                        duration_ms: crate::resilience::transfer_ms(*restore_bytes, link),
                        restore: true,
                    });
                }
                (Some(*job), "launched")
            }
            AgentEvent::LaunchFailed { job, .. } => (Some(*job), "launch_failed"),
            AgentEvent::CheckpointWritten { job, at, manifest, is_final, .. } => {
                self.obs.transfers.push(Transfer {
                    at: *at,
                    bytes: manifest.payload_bytes,
                    duration_ms: crate::resilience::transfer_ms(manifest.payload_bytes, link),
                    restore: false,
                });
                if *is_final {
                    self.obs.final_checkpoints.entry(*job).or_default().push(*at);
                }
                (Some(*job), "checkpoint_written")
            }
            AgentEvent::CheckpointFailed { job, .. } => (Some(*job), "checkpoint_failed"),
            AgentEvent::Terminated { job, at, progress_ms } | AgentEvent::Exited { job, at, progress_ms, .. } => {
                let ok = matches!(e, AgentEvent::Exited { code: 0, .. });
                if let Some(run) = self
                    .obs
                    .runs
                    .get_mut(job)
                    .and_then(|runs| runs.iter_mut().rev().find(|r| r.node == node && r.ended.is_none()))
                {
                    run.ended = Some((*at, *progress_ms));
                    run.exited_ok = ok;
                }
                (Some(*job), if matches!(e, AgentEvent::Exited { .. }) { "exited" } else { "terminated" })
            }
            AgentEvent::DepartureStarted { .. } => (None, "departure_started"),
            AgentEvent::DepartureCompleted { at, .. } => {
                if self.nodes[i].phase == Phase::Draining {
                    self.nodes[i].phase = Phase::Away;
                    self.nodes[i].up = false;
                    self.set_online(i, false);
                    let back = *at + self.offline_sample(i);
                    self.push(back, Ev::Rejoin(i));
                }
                (None, "departure_completed")
            }
        };
        let detail = serde_json::to_string(&e).unwrap_or_default();
        self.row("agent", Some(node), job, name, detail);
    }
}
