#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use gpunion_core::clock::{Clock, ManualClock};
use gpunion_core::coordinator::{
    Coordinator, CoordinatorConfig, DepartureKind, DepartureNotice, DeparturePhase, Heartbeat, RegisterRequest,
    SharedEventStore, WorkloadPhase, WorkloadReport,
};
use gpunion_core::domain::{
    AdvertisedState, CheckpointMode, ComputeCapability, GpuDescriptor, JobId, JobMode, JobSpec, JobState, Millis,
    NodeId, StorageTarget, SECOND,
};
use proptest::prelude::*;

pub const DIGEST: &str = "sha256:5e1f0c2a9b8d7e6f5a4b3c2d1e0f9a8b7c6d5e4f3a2b1c0d9e8f7a6b5c4d3e2f";

pub fn gpu(index: u32, memory_mib: u64, cc: (u32, u32)) -> GpuDescriptor {
    GpuDescriptor {
        index,
        model: "RTX 3090".into(),
        memory_mib,
        compute_capability: ComputeCapability(cc.0, cc.1),
    }
}

pub fn gpus(n: u32) -> Vec<GpuDescriptor> {
    (0..n).map(|i| gpu(i, 24576, (8, 6))).collect()
}

pub fn spec(memory_mib: u64) -> JobSpec {
    JobSpec {
        image_ref: "registry.campus/train/resnet:1.4".into(),
        image_digest: DIGEST.into(),
        mode: JobMode::Batch,
        entrypoint: vec!["python".into(), "train.py".into()],
        gpu_memory_mib_required: memory_mib,
        min_compute_capability: ComputeCapability(7, 0),
        priority: 0,
        checkpoint_interval_s: 600,
        checkpoint_mode: CheckpointMode::Incremental,
        storage_target: StorageTarget::SharedFs { path: "/campus/ckpt".into() },
        estimated_duration_s: 3600,
        affinity_window_s: 0,
    }
}

pub fn config() -> CoordinatorConfig {
    CoordinatorConfig { allow_list: BTreeSet::from([DIGEST.to_string()]), ..Default::default() }
}

/// A coordinator on a manual clock with a readable event log.
pub struct Harness {
    pub coord: Coordinator,
    pub clock: ManualClock,
    pub log: SharedEventStore,
    pub tokens: BTreeMap<NodeId, String>,
    pub seqs: BTreeMap<NodeId, u64>,
    pub order: Vec<NodeId>,
}

impl Harness {
    pub fn new() -> Self {
        Self::with_config(config())
    }

    pub fn with_config(cfg: CoordinatorConfig) -> Self {
        let clock = ManualClock::new(0);
        let log = SharedEventStore::default();
        let coord = Coordinator::new(cfg, Arc::new(clock.clone()))
            .expect("valid config")
            .with_seed(7)
            .with_store(Box::new(log.clone()));
        Self { coord, clock, log, tokens: BTreeMap::new(), seqs: BTreeMap::new(), order: Vec::new() }
    }

    pub fn now(&self) -> Millis {
        self.coord.now()
    }

    pub fn set(&self, t: Millis) {
        self.clock.set(t);
    }

    pub fn register(&mut self, gpus: Vec<GpuDescriptor>, latency_ms: f64) -> NodeId {
        let resp = self
            .coord
            .register_node(RegisterRequest { gpus, latency_ms, prior_id: None })
            .expect("registration accepted");
        self.tokens.insert(resp.node_id, resp.token);
        self.seqs.insert(resp.node_id, 0);
        self.order.push(resp.node_id);
        resp.node_id
    }

    /// Heartbeat reporting `workloads`; returns the directives.
    pub fn beat_with(&mut self, node: NodeId, workloads: Vec<WorkloadReport>) -> Vec<gpunion_core::coordinator::Directive> {
        let seq = self.seqs.get_mut(&node).expect("known node");
        *seq += 1;
        let msg = Heartbeat {
            node_id: node,
            seq: *seq,
            telemetry: Vec::new(),
            advertised: AdvertisedState::Active,
            workloads,
            checkpoints: Vec::new(),
            latency_ms: None,
        };
        match self.coord.heartbeat_round(&msg, &self.tokens[&node]) {
            Ok(ack) => ack.directives,
            Err(_) => Vec::new(),
        }
    }

    /// Heartbeat from a well-behaved agent: every job allocated to the node is
    /// reported running.
    pub fn beat(&mut self, node: NodeId) -> Vec<gpunion_core::coordinator::Directive> {
        let reports = self.allocated_reports(node, WorkloadPhase::Running);
        self.beat_with(node, reports)
    }

    pub fn allocated_reports(&self, node: NodeId, phase: WorkloadPhase) -> Vec<WorkloadReport> {
        self.coord
            .state()
            .jobs_on(node)
            .map(|j| WorkloadReport {
                job_id: j.id,
                phase,
                gpu_indices: j.allocation.as_ref().map(|a| a.gpu_indices.clone()).unwrap_or_default(),
                error: None,
            })
            .collect()
    }

    pub fn notice(&mut self, node: NodeId, kind: DepartureKind, phase: DeparturePhase, grace_s: u64) {
        let n = DepartureNotice { kind, phase, grace_s, checkpoints: Vec::new(), sent_at: self.now() };
        let _ = self.coord.departure_notice(node, &self.tokens[&node], &n);
    }

    pub fn job_state(&self, id: JobId) -> JobState {
        self.coord.get_job(id).expect("known job").state
    }

    /// Each (node, gpu) pair backs at most one live allocation, and every
    /// allocated job holds exactly one allocation.
    pub fn single_allocation_holds(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for j in self.coord.jobs() {
            match (&j.allocation, j.state.holds_allocation()) {
                (Some(a), true) => {
                    for g in &a.gpu_indices {
                        if !seen.insert((a.node_id, *g)) {
                            return Err(format!("gpu {g} on {} allocated twice", a.node_id));
                        }
                    }
                }
                (None, true) => return Err(format!("job {} in {:?} has no allocation", j.id, j.state)),
                (Some(_), false) => return Err(format!("job {} in {:?} keeps an allocation", j.id, j.state)),
                (None, false) => {}
            }
        }
        self.coord.state().check_invariants()
    }
}

/// One step of a randomized coordinator workload.
#[derive(Debug, Clone)]
pub enum Op {
    Register { gpus: u32, latency_ms: u8 },
    Heartbeat { node: usize, finish: bool },
    Advance { secs: u16 },
    Tick,
    Enqueue { memory_gib: u8 },
    Cancel { job: usize },
    Drain { node: usize, grace_s: u8 },
    Kill { node: usize },
    Pause { node: usize },
    Resume { node: usize },
    Emergency { node: usize },
    Rejoin { node: usize },
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        2 => (1u32..=4, 0u8..50).prop_map(|(gpus, latency_ms)| Op::Register { gpus, latency_ms }),
        6 => (0usize..8, prop::bool::weighted(0.2)).prop_map(|(node, finish)| Op::Heartbeat { node, finish }),
        4 => (1u16..90).prop_map(|secs| Op::Advance { secs }),
        4 => Just(Op::Tick),
        4 => (1u8..30).prop_map(|memory_gib| Op::Enqueue { memory_gib }),
        1 => (0usize..20).prop_map(|job| Op::Cancel { job }),
        1 => (0usize..8, 0u8..120).prop_map(|(node, grace_s)| Op::Drain { node, grace_s }),
        1 => (0usize..8).prop_map(|node| Op::Kill { node }),
        1 => (0usize..8).prop_map(|node| Op::Pause { node }),
        1 => (0usize..8).prop_map(|node| Op::Resume { node }),
        1 => (0usize..8).prop_map(|node| Op::Emergency { node }),
        1 => (0usize..8).prop_map(|node| Op::Rejoin { node }),
    ]
}

impl Harness {
    fn pick(&self, i: usize) -> Option<NodeId> {
        (!self.order.is_empty()).then(|| self.order[i % self.order.len()])
    }

    /// Applies one operation. Rejected requests are fine; they must simply
    /// leave no trace in the log.
    pub fn apply(&mut self, op: &Op) {
        match *op {
            Op::Register { gpus, latency_ms } => {
                if self.order.len() < 8 {
                    self.register(self::gpus(gpus), f64::from(latency_ms));
                }
            }
            Op::Heartbeat { node, finish } => {
                let Some(id) = self.pick(node) else { return };
                let phase = if finish { WorkloadPhase::Exited { code: 0 } } else { WorkloadPhase::Running };
                let reports = self.allocated_reports(id, phase);
                self.beat_with(id, reports);
            }
            Op::Advance { secs } => self.clock.advance(u64::from(secs) * SECOND),
            Op::Tick => {
                let now = self.now();
                self.coord.tick(now);
            }
            Op::Enqueue { memory_gib } => {
                let _ = self.coord.enqueue_job(spec(u64::from(memory_gib) * 1024));
            }
            Op::Cancel { job } => {
                let n = self.coord.state().jobs.len();
                if n > 0 {
                    let _ = self.coord.cancel_job(JobId((job % n) as u64));
                }
            }
            Op::Drain { node, grace_s } => {
                if let Some(id) = self.pick(node) {
                    let _ = self.coord.drain_node(id, Some(u64::from(grace_s)));
                }
            }
            Op::Kill { node } => {
                if let Some(id) = self.pick(node) {
                    let _ = self.coord.request_kill(id, 0);
                }
            }
            Op::Pause { node } => {
                if let Some(id) = self.pick(node) {
                    let _ = self.coord.pause_node(id);
                }
            }
            Op::Resume { node } => {
                if let Some(id) = self.pick(node) {
                    let _ = self.coord.resume_node(id);
                }
            }
            Op::Emergency { node } => {
                if let Some(id) = self.pick(node) {
                    self.notice(id, DepartureKind::Emergency, DeparturePhase::Completed, 0);
                }
            }
            Op::Rejoin { node } => {
                if let Some(id) = self.pick(node) {
                    let gpus = self.coord.state().nodes[&id].gpus.clone();
                    if let Ok(resp) = self.coord.register_node(RegisterRequest { gpus, latency_ms: 3.0, prior_id: Some(id) }) {
                        self.tokens.insert(id, resp.token);
                    }
                }
            }
        }
    }
}

/// An agent on a simulated runtime with no coordinator attached.
pub struct AgentRig {
    pub agent: gpunion_core::agent::Agent,
    pub clock: ManualClock,
    pub store: gpunion_core::resilience::MemoryCheckpointStore,
}

impl AgentRig {
    /// `checkpoint_s` is the time a stopping checkpoint takes, regardless of size.
    pub fn new(gpu_count: u32, checkpoint_s: f64) -> Self {
        use gpunion_core::agent::{
            Agent, AgentSettings, SimulatedProbe, SimulatedRegistry, SimulatedRuntime, WorkloadCatalog, WorkloadProfile,
        };
        let clock = ManualClock::new(0);
        let registry = SimulatedRegistry::default().with(&spec(1024).image_ref, DIGEST);
        let catalog = WorkloadCatalog {
            profiles: BTreeMap::new(),
            fallback: WorkloadProfile { checkpoint_base_s: checkpoint_s, checkpoint_per_gib_s: 0.0, ..Default::default() },
        };
        let runtime = SimulatedRuntime::new(Arc::new(clock.clone()), registry, catalog, "rig");
        let store = gpunion_core::resilience::MemoryCheckpointStore::new();
        let mut agent = Agent::new(
            NodeId::from_u128(0xa11ce),
            gpus(gpu_count),
            2.0,
            Arc::new(clock.clone()),
            Box::new(runtime),
            Arc::new(store.clone()),
            Box::new(SimulatedProbe),
            AgentSettings::default(),
        );
        agent.set_token("rig-token".into());
        Self { agent, clock, store }
    }

    pub fn launch(&mut self, job: u64, s: JobSpec, gpu: u32) {
        let d = gpunion_core::coordinator::Directive::Launch {
            job_id: JobId(job),
            spec: s,
            gpu_indices: vec![gpu],
            restore_from: None,
        };
        self.agent.execute_directive(&d).expect("launch accepted");
    }

    /// Runs supervision at each wake-up until `until` or until the agent halts.
    pub fn run_until(&mut self, until: Millis) {
        loop {
            let now = self.clock.now();
            self.agent.supervise(now);
            if self.agent.is_halted() {
                return;
            }
            match self.agent.next_wake(now) {
                Some(t) if t <= until => self.clock.set(t.max(now + 1).min(until)),
                _ => {
                    self.clock.set(until);
                    self.agent.supervise(until);
                    return;
                }
            }
        }
    }
}

pub fn scenario(name: &str) -> gpunion_core::sim::SimConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    gpunion_core::sim::SimConfig::load(&path).expect("scenario parses")
}

/// Coordinator default heartbeat interval.
pub const HEARTBEAT: Millis = 10 * SECOND;

/// Drives one node through a silence starting right after its last
/// heartbeat and returns the first tick time at which it is Unavailable.
pub fn detection_time(onset: u64, tick_offset: u64, tick_period: u64) -> u64 {
    let mut h = Harness::new();
    let node = h.register(gpus(1), 1.0);
    let mut t = 0;
    while t + HEARTBEAT <= onset {
        t += HEARTBEAT;
        h.set(t);
        h.beat(node);
    }
    h.set(onset);
    h.beat(node);
    let mut tick = tick_offset;
    while tick <= onset {
        tick += tick_period;
    }
    loop {
        h.set(tick);
        h.coord.tick(tick);
        if h.coord.state().nodes[&node].state == gpunion_core::domain::NodeState::Unavailable {
            return tick;
        }
        assert!(tick < onset + 10 * HEARTBEAT, "never declared");
        tick += tick_period;
    }
}

/// Jobs placed per node when `jobs` identical jobs are scheduled one tick
/// at a time onto `k` identical nodes.
pub fn round_robin_counts(k: usize, jobs: usize) -> Vec<usize> {
    let mut h = Harness::new();
    let nodes: Vec<NodeId> = (0..k).map(|_| h.register(gpus(16), 5.0)).collect();
    for _ in 0..jobs {
        h.coord.enqueue_job(spec(1024)).unwrap();
        h.coord.tick(SECOND);
    }
    let mut counts: BTreeMap<NodeId, usize> = nodes.iter().map(|n| (*n, 0)).collect();
    for j in h.coord.jobs() {
        *counts.get_mut(&j.allocation.as_ref().expect("placed").node_id).expect("known node") += 1;
    }
    counts.into_values().collect()
}
