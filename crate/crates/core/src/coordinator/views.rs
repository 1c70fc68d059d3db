//! Read-only projections served by the REST API.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{
    AdvertisedState, GpuDescriptor, JobRecord, JobState, Millis, NodeId, NodeRecord, NodeState,
};

use super::state::CoordinatorState;

/// A node record without its credential hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: NodeId,
    pub gpus: Vec<GpuDescriptor>,
    pub state: NodeState,
    pub latency_ms: f64,
    pub volatility_score: f64,
    pub last_heartbeat_seq: u64,
    pub last_heartbeat_at: Millis,
    pub missed_heartbeats: u32,
    pub advertised: AdvertisedState,
    pub gpus_busy: usize,
}

impl NodeView {
    pub fn new(n: &NodeRecord, state: &CoordinatorState) -> Self {
        Self {
            id: n.id,
            gpus: n.gpus.clone(),
            state: n.state,
            latency_ms: n.latency_ms,
            volatility_score: n.volatility_score,
            last_heartbeat_seq: n.last_heartbeat_seq,
            last_heartbeat_at: n.last_heartbeat_at,
            missed_heartbeats: n.missed_heartbeats,
            advertised: n.advertised,
            gpus_busy: state.used_gpus(n.id).len(),
        }
    }
}

pub type JobView = JobRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub nodes_total: usize,
    pub nodes_by_state: BTreeMap<String, usize>,
    pub gpus_total: usize,
    pub gpus_busy: usize,
    pub jobs_total: usize,
    pub jobs_by_state: BTreeMap<String, usize>,
    pub migrations_total: u64,
    pub returns_total: u64,
    pub heartbeat_misses_total: u64,
    pub checkpoint_bytes_total: u64,
}

pub fn state_label<T: std::fmt::Debug>(s: T) -> String {
    let dbg = format!("{s:?}");
    let mut out = String::new();
    for (i, c) in dbg.chars().enumerate() {
        if c.is_uppercase() && i > 0 {
            out.push('_');
        }
        out.push(c.to_ascii_lowercase());
    }
    out
}

impl ClusterSummary {
    pub fn new(state: &CoordinatorState) -> Self {
        let mut nodes_by_state: BTreeMap<String, usize> =
            NodeState::ALL.iter().map(|s| (state_label(s), 0)).collect();
        for n in state.nodes.values() {
            *nodes_by_state.entry(state_label(n.state)).or_default() += 1;
        }
        let mut jobs_by_state: BTreeMap<String, usize> =
            JobState::ALL.iter().map(|s| (state_label(s), 0)).collect();
        for j in state.jobs.values() {
            *jobs_by_state.entry(state_label(j.state)).or_default() += 1;
        }
        let live = |n: &&NodeRecord| !matches!(n.state, NodeState::Departed | NodeState::Unavailable);
        Self {
            nodes_total: state.nodes.len(),
            nodes_by_state,
            gpus_total: state.nodes.values().filter(live).map(|n| n.gpus.len()).sum(),
            gpus_busy: state.jobs.values().filter(|j| j.state.holds_allocation()).count(),
            jobs_total: state.jobs.len(),
            jobs_by_state,
            migrations_total: state.counters.migrations_total,
            returns_total: state.counters.returns_total,
            heartbeat_misses_total: state.counters.heartbeat_misses_total,
            checkpoint_bytes_total: state.counters.checkpoint_bytes_total,
        }
    }
}
