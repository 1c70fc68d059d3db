use serde::{Deserialize, Serialize};

use crate::domain::{CheckpointMode, Millis, SECOND};

/// Fixed per-manifest overhead added to every incremental payload.
pub const MANIFEST_OVERHEAD_BYTES: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    pub interval_s: u64,
    pub mode: CheckpointMode,
    #[serde(default = "default_full_every_n")]
    pub full_every_n: u32,
}

fn default_full_every_n() -> u32 {
    10
}

impl CheckpointPolicy {
    pub fn new(interval_s: u64, mode: CheckpointMode) -> Self {
        Self { interval_s, mode, full_every_n: default_full_every_n() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.interval_s == 0 {
            return Err("checkpoint interval_s must be positive".into());
        }
        if self.full_every_n == 0 {
            return Err("full_every_n must be at least 1".into());
        }
        Ok(())
    }

    pub fn interval(&self) -> Millis {
        self.interval_s * SECOND
    }

    /// Kind of the next checkpoint given the length of the current verified
    /// chain (Full manifest included), or `None` when no chain exists.
    pub fn next_kind(&self, chain_len: Option<u32>) -> CheckpointMode {
        match (self.mode, chain_len) {
            (CheckpointMode::Full, _) | (_, None) => CheckpointMode::Full,
            (CheckpointMode::Incremental, Some(len)) if len >= self.full_every_n => CheckpointMode::Full,
            (CheckpointMode::Incremental, Some(_)) => CheckpointMode::Incremental,
        }
    }
}

/// Simulated application state of a workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadStateModel {
    pub total_state_bytes: u64,
    #[serde(default = "default_dirty_fraction")]
    pub dirty_fraction: f64,
}

fn default_dirty_fraction() -> f64 {
    0.10
}

impl WorkloadStateModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dirty_fraction > 0.0 && self.dirty_fraction <= 1.0) {
            return Err(format!("dirty_fraction {} outside (0, 1]", self.dirty_fraction));
        }
        Ok(())
    }
}

pub fn payload_bytes(kind: CheckpointMode, model: &WorkloadStateModel) -> u64 {
    match kind {
        CheckpointMode::Full => model.total_state_bytes,
        CheckpointMode::Incremental => {
            (model.dirty_fraction * model.total_state_bytes as f64).ceil() as u64 + MANIFEST_OVERHEAD_BYTES
        }
    }
}

/// Milliseconds to move `bytes` over a link of `mbps` megabits per second,
/// rounded up.
pub fn transfer_ms(bytes: u64, mbps: u64) -> Millis {
    if mbps == 0 {
        return Millis::MAX;
    }
    let bits_ms = u128::from(bytes) * 8;
    let per_ms = u128::from(mbps) * 1_000;
    bits_ms.div_ceil(per_ms) as Millis
}

/// Link and constant costs used for restore and downtime estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestoreModel {
    pub link_bandwidth_mbps: u64,
    pub restore_overhead_s: u64,
}

impl Default for RestoreModel {
    fn default() -> Self {
        Self { link_bandwidth_mbps: 1_000, restore_overhead_s: 5 }
    }
}

impl RestoreModel {
    pub fn restore_cost_ms(&self, transfer_bytes: u64) -> Millis {
        transfer_ms(transfer_bytes, self.link_bandwidth_mbps) + self.restore_overhead_s * SECOND
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GIB: u64 = 1 << 30;

    #[test]
    fn payload_formula() {
        let m = WorkloadStateModel { total_state_bytes: 10 * GIB, dirty_fraction: 0.10 };
        assert_eq!(payload_bytes(CheckpointMode::Full, &m), 10 * GIB);
        // ceil(0.1 · 10 GiB) = 1 GiB exactly, plus the 4 KiB manifest overhead.
        assert_eq!(payload_bytes(CheckpointMode::Incremental, &m), GIB + 4096);
        let odd = WorkloadStateModel { total_state_bytes: 7, dirty_fraction: 0.5 };
        assert_eq!(payload_bytes(CheckpointMode::Incremental, &odd), 4 + 4096);
    }

    #[test]
    fn every_nth_is_full() {
        let p = CheckpointPolicy::new(600, CheckpointMode::Incremental);
        assert_eq!(p.next_kind(None), CheckpointMode::Full);
        assert_eq!(p.next_kind(Some(1)), CheckpointMode::Incremental);
        assert_eq!(p.next_kind(Some(9)), CheckpointMode::Incremental);
        assert_eq!(p.next_kind(Some(10)), CheckpointMode::Full);
        let full = CheckpointPolicy::new(600, CheckpointMode::Full);
        assert_eq!(full.next_kind(Some(1)), CheckpointMode::Full);
    }

    #[test]
    fn transfer_rounds_up() {
        // 125 MB at 1000 Mbps is exactly one second.
        assert_eq!(transfer_ms(125_000_000, 1_000), 1_000);
        assert_eq!(transfer_ms(125_000_001, 1_000), 1_001);
        assert_eq!(transfer_ms(0, 1_000), 0);
        assert_eq!(RestoreModel::default().restore_cost_ms(0), 5_000);
    }
}
