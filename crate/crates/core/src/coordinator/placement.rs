//! Candidate filtering, scoring and tie-breaking.

use std::collections::BTreeMap;

use crate::domain::{GpuDescriptor, JobId, JobRecord, Millis, NodeId, NodeRecord};

use super::state::CoordinatorState;

/// Scores within this distance are treated as equal.
const SCORE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub node: NodeId,
    pub gpu_index: u32,
    pub volatility: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub node: NodeId,
    pub gpu_index: u32,
    pub via_affinity: bool,
}

pub trait PlacementPolicy: Send {
    fn place(&self, job: &JobRecord, state: &CoordinatorState, now: Millis) -> Option<Placement>;
}

/// Smallest free GPU on `node` that satisfies the job's memory and
/// compute-capability constraints, or `None` if the node is not schedulable.
pub fn best_fit_gpu(job: &JobRecord, node: &NodeRecord, state: &CoordinatorState) -> Option<u32> {
    if !node.state.accepts_work() {
        return None;
    }
    let used = state.used_gpus(node.id);
    node.gpus
        .iter()
        .filter(|g| !used.contains(&g.index) && fits(job, g))
        .min_by_key(|g| (g.memory_mib, g.index))
        .map(|g| g.index)
}

pub fn fits(job: &JobRecord, gpu: &GpuDescriptor) -> bool {
    gpu.memory_mib >= job.spec.gpu_memory_mib_required
        && gpu.compute_capability >= job.spec.min_compute_capability
}

pub fn candidates(job: &JobRecord, state: &CoordinatorState) -> Vec<Candidate> {
    state
        .nodes
        .values()
        .filter_map(|n| {
            best_fit_gpu(job, n, state).map(|gpu_index| Candidate {
                node: n.id,
                gpu_index,
                volatility: n.volatility_score,
                latency_ms: n.latency_ms,
            })
        })
        .collect()
}

fn min_max_norm(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if values.len() < 2 || range <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / range).collect()
}

/// `w_v·(1 − vol_norm) + w_l·(1 − lat_norm)` for each candidate, in order.
pub fn scores(cands: &[Candidate], w_v: f64, w_l: f64) -> Vec<f64> {
    let vol = min_max_norm(&cands.iter().map(|c| c.volatility).collect::<Vec<_>>());
    let lat = min_max_norm(&cands.iter().map(|c| c.latency_ms).collect::<Vec<_>>());
    vol.iter().zip(&lat).map(|(v, l)| w_v * (1.0 - v) + w_l * (1.0 - l)).collect()
}

/// Among `tied` (sorted by NodeId), the first id after `cursor`, wrapping.
pub fn round_robin_pick(tied: &[NodeId], cursor: Option<NodeId>) -> Option<NodeId> {
    let first = *tied.first()?;
    match cursor {
        Some(c) => Some(tied.iter().copied().find(|id| *id > c).unwrap_or(first)),
        None => Some(first),
    }
}

/// Picks the best-scoring candidate, breaking ties with the round-robin cursor.
pub fn choose(cands: &[Candidate], w_v: f64, w_l: f64, cursor: Option<NodeId>) -> Option<Candidate> {
    let s = scores(cands, w_v, w_l);
    let best = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut tied: Vec<NodeId> = cands
        .iter()
        .zip(&s)
        .filter(|(_, sc)| best - **sc <= SCORE_EPSILON)
        .map(|(c, _)| c.node)
        .collect();
    tied.sort();
    let node = round_robin_pick(&tied, cursor)?;
    cands.iter().find(|c| c.node == node).copied()
}

/// Live affinity tag pointing at a node that passes the filter.
pub fn affinity_placement(job: &JobRecord, state: &CoordinatorState, now: Millis) -> Option<Placement> {
    let tag = job.affinity.filter(|t| t.is_live(now))?;
    let node = state.nodes.get(&tag.node)?;
    best_fit_gpu(job, node, state).map(|gpu_index| Placement { node: node.id, gpu_index, via_affinity: true })
}

/// The default policy: affinity bypass, then volatility/latency scoring with
/// round-robin tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringPolicy {
    pub weight_volatility: f64,
    pub weight_latency: f64,
}

impl Default for ScoringPolicy {
    fn default() -> Self {
        Self { weight_volatility: 0.5, weight_latency: 0.5 }
    }
}

impl PlacementPolicy for ScoringPolicy {
    fn place(&self, job: &JobRecord, state: &CoordinatorState, now: Millis) -> Option<Placement> {
        if let Some(p) = affinity_placement(job, state, now) {
            return Some(p);
        }
        let cands = candidates(job, state);
        choose(&cands, self.weight_volatility, self.weight_latency, state.rr_cursor)
            .map(|c| Placement { node: c.node, gpu_index: c.gpu_index, via_affinity: false })
    }
}

/// Static ownership: a job may only run on its owner's node. Jobs without an
/// owner are never placed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OwnershipPolicy {
    pub owners: BTreeMap<JobId, NodeId>,
}

impl PlacementPolicy for OwnershipPolicy {
    fn place(&self, job: &JobRecord, state: &CoordinatorState, _now: Millis) -> Option<Placement> {
        let owner = state.nodes.get(self.owners.get(&job.id)?)?;
        best_fit_gpu(job, owner, state).map(|gpu_index| Placement { node: owner.id, gpu_index, via_affinity: false })
    }
}
