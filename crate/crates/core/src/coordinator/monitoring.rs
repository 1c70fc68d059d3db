use std::collections::{BTreeMap, VecDeque};

use crate::domain::{GpuTelemetry, NodeId};

/// Bounded per-GPU telemetry history. Kept outside the event log: samples
/// are high-volume and not needed to reconstruct scheduling state.
#[derive(Debug, Clone)]
pub struct MonitoringStore {
    per_gpu: usize,
    samples: BTreeMap<(NodeId, u32), VecDeque<GpuTelemetry>>,
}

impl Default for MonitoringStore {
    fn default() -> Self {
        Self::new(360)
    }
}

impl MonitoringStore {
    pub fn new(per_gpu: usize) -> Self {
        Self { per_gpu: per_gpu.max(1), samples: BTreeMap::new() }
    }

    pub fn record(&mut self, sample: GpuTelemetry) {
        let q = self.samples.entry((sample.node, sample.gpu_index)).or_default();
        if q.len() == self.per_gpu {
            q.pop_front();
        }
        q.push_back(sample);
    }

    pub fn latest(&self) -> impl Iterator<Item = &GpuTelemetry> {
        self.samples.values().filter_map(|q| q.back())
    }

    pub fn history(&self, node: NodeId, gpu: u32) -> impl Iterator<Item = &GpuTelemetry> {
        self.samples.get(&(node, gpu)).into_iter().flatten()
    }

    pub fn forget(&mut self, node: NodeId) {
        self.samples.retain(|(n, _), _| *n != node);
    }
}
