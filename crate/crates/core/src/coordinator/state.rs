use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{DrainRequest, JobId, JobRecord, JobState, NodeId, NodeRecord, NodeState};

use super::events::{Event, EventLogEntry};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub migrations_total: u64,
    pub returns_total: u64,
    pub heartbeat_misses_total: u64,
    pub checkpoint_bytes_total: u64,
    pub jobs_submitted_total: u64,
}

/// Everything the coordinator knows, as a plain value. Mutated only by
/// [`CoordinatorState::apply`], so a replayed log reproduces it exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorState {
    pub nodes: BTreeMap<NodeId, NodeRecord>,
    pub jobs: BTreeMap<JobId, JobRecord>,
    pub next_job_id: u64,
    pub next_enqueue_seq: u64,
    pub rr_cursor: Option<NodeId>,
    pub day: u64,
    pub counters: Counters,
    pub last_seq: u64,
    /// GPUs backing a live allocation, derived from `jobs`.
    #[serde(skip)]
    gpu_holders: BTreeMap<(NodeId, u32), JobId>,
}

impl CoordinatorState {
    pub fn apply(&mut self, entry: &EventLogEntry) -> Result<(), String> {
        let at = entry.at;
        match &entry.payload {
            Event::NodeRegistered { node } => {
                self.nodes.insert(node.id, node.clone());
            }
            Event::HeartbeatAccepted { node, seq, advertised, latency_ms } => {
                let n = self.node_mut(*node)?;
                n.last_heartbeat_seq = *seq;
                n.last_heartbeat_at = at;
                n.missed_heartbeats = 0;
                n.advertised = *advertised;
                if let Some(l) = latency_ms {
                    n.latency_ms = *l;
                }
            }
            Event::HeartbeatMissed { node, missed } => {
                let n = self.node_mut(*node)?;
                let added = missed.saturating_sub(n.missed_heartbeats);
                n.missed_heartbeats = *missed;
                self.counters.heartbeat_misses_total += u64::from(added);
            }
            Event::NodeStateChanged { node, from, to, .. } => {
                let n = self.node_mut(*node)?;
                if n.state != *from {
                    return Err(format!("node {node} is {:?}, event says {from:?}", n.state));
                }
                n.state = *to;
                if !matches!(to, NodeState::Draining) {
                    n.drain_requested = None;
                }
                if !to.is_monitored() && *to != NodeState::Draining {
                    n.kill_requested = None;
                }
                if *to == NodeState::Active && matches!(from, NodeState::Unavailable | NodeState::Registering) {
                    n.missed_heartbeats = 0;
                    n.last_heartbeat_at = at;
                }
            }
            Event::DrainRequested { node, grace_s } => {
                self.node_mut(*node)?.drain_requested =
                    Some(DrainRequest { grace_s: *grace_s, requested_at: at });
            }
            Event::KillRequested { node, grace_s } => {
                self.node_mut(*node)?.kill_requested =
                    Some(DrainRequest { grace_s: *grace_s, requested_at: at });
            }
            Event::VolatilityUpdated { node, volatility_score, interruptions_today } => {
                let n = self.node_mut(*node)?;
                n.volatility_score = *volatility_score;
                n.interruptions_today = *interruptions_today;
            }
            Event::DayRolled { day } => self.day = *day,
            Event::JobEnqueued { job } => {
                self.next_job_id = self.next_job_id.max(job.id.0 + 1);
                self.next_enqueue_seq = self.next_enqueue_seq.max(job.enqueue_seq + 1);
                self.counters.jobs_submitted_total += 1;
                self.jobs.insert(job.id, job.clone());
                self.reindex(job.id);
            }
            Event::AllocationGranted { allocation, via_affinity } => {
                if !self.nodes.contains_key(&allocation.node_id) {
                    return Err(format!("allocation on unknown node {}", allocation.node_id));
                }
                let j = self.job_mut(allocation.job_id)?;
                j.state = JobState::Scheduled;
                j.allocation = Some(allocation.clone());
                j.history.push(allocation.clone());
                j.affinity = None;
                if !via_affinity {
                    self.rr_cursor = Some(allocation.node_id);
                }
                self.reindex(allocation.job_id);
            }
            Event::CheckpointRequested { job, requested } => {
                self.job_mut(*job)?.checkpoint_requested = *requested;
            }
            Event::CheckpointRecorded { manifest } => {
                let j = self.job_mut(manifest.job_id)?;
                j.checkpoints.push(manifest.clone());
                j.checkpoint_requested = false;
                self.counters.checkpoint_bytes_total += manifest.payload_bytes;
            }
            Event::MigrationStarted { job, from, reason, affinity } => {
                let j = self.job_mut(*job)?;
                j.state = JobState::Migrating;
                j.allocation = None;
                j.displaced_from = Some(*from);
                j.displacements += 1;
                j.affinity = Some(*affinity);
                j.checkpoint_requested = false;
                j.last_reason = Some(reason.clone());
                self.reindex(*job);
            }
            Event::MigrationCompleted { job, returned, .. } => {
                self.job_mut(*job)?.displaced_from = None;
                self.counters.migrations_total += 1;
                self.counters.returns_total += u64::from(*returned);
            }
            Event::JobStateChanged { job, from, to, reason } => {
                let j = self.job_mut(*job)?;
                if j.state != *from {
                    return Err(format!("job {job} is {:?}, event says {from:?}", j.state));
                }
                j.state = *to;
                if !to.holds_allocation() {
                    j.allocation = None;
                }
                if to.is_terminal() {
                    j.checkpoint_requested = false;
                    j.displaced_from = None;
                }
                j.last_reason = Some(reason.clone());
                self.reindex(*job);
            }
        }
        self.last_seq = entry.seq;
        Ok(())
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut NodeRecord, String> {
        self.nodes.get_mut(&id).ok_or_else(|| format!("unknown node {id}"))
    }

    fn job_mut(&mut self, id: JobId) -> Result<&mut JobRecord, String> {
        self.jobs.get_mut(&id).ok_or_else(|| format!("unknown job {id}"))
    }

    fn reindex(&mut self, id: JobId) {
        self.gpu_holders.retain(|_, j| *j != id);
        if let Some(a) = self.jobs[&id].allocation.as_ref().filter(|_| self.jobs[&id].state.holds_allocation()) {
            for &g in &a.gpu_indices {
                self.gpu_holders.insert((a.node_id, g), id);
            }
        }
    }

    /// Rebuilds the derived GPU index, e.g. after deserializing a snapshot.
    pub fn rebuild_index(&mut self) {
        self.gpu_holders.clear();
        let ids: Vec<JobId> = self.jobs.keys().copied().collect();
        for id in ids {
            self.reindex(id);
        }
    }

    /// GPU indices on `node` currently backing an allocation.
    pub fn used_gpus(&self, node: NodeId) -> BTreeSet<u32> {
        self.gpu_holders.range((node, 0)..=(node, u32::MAX)).map(|(&(_, g), _)| g).collect()
    }

    /// Whether any node accepting work has a GPU without an allocation.
    pub fn has_free_gpu(&self) -> bool {
        self.nodes
            .values()
            .filter(|n| n.state.accepts_work())
            .any(|n| n.gpus.iter().any(|g| !self.gpu_holders.contains_key(&(n.id, g.index))))
    }

    pub fn jobs_on(&self, node: NodeId) -> impl Iterator<Item = &JobRecord> {
        self.jobs.values().filter(move |j| {
            j.state.holds_allocation() && j.allocation.as_ref().is_some_and(|a| a.node_id == node)
        })
    }

    /// Checks the single-allocation and node-record invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for j in self.jobs.values() {
            match (&j.allocation, j.state.holds_allocation()) {
                (Some(a), true) => {
                    let node = self
                        .nodes
                        .get(&a.node_id)
                        .ok_or_else(|| format!("job {} allocated on unknown node", j.id))?;
                    for g in &a.gpu_indices {
                        if node.gpu(*g).is_none() {
                            return Err(format!("job {} holds missing gpu {g}", j.id));
                        }
                        if !seen.insert((a.node_id, *g)) {
                            return Err(format!("gpu {g} on {} double-allocated", a.node_id));
                        }
                    }
                }
                (None, false) => {}
                (Some(_), false) => return Err(format!("job {} keeps allocation in {:?}", j.id, j.state)),
                (None, true) => return Err(format!("job {} in {:?} without allocation", j.id, j.state)),
            }
        }
        for n in self.nodes.values() {
            n.check_invariants()?;
        }
        Ok(())
    }
}
