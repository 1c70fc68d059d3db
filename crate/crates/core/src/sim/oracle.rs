//! Closed-form expectations for simple scenarios, used to sanity-check
//! simulator output.

use serde::{Deserialize, Serialize};

use crate::domain::{CheckpointMode, SECOND};
use crate::resilience::{payload_bytes, RestoreModel};

use super::config::SimWorkload;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadOracle {
    /// Uniform interruption point within a checkpoint interval.
    pub expected_lost_s: f64,
    /// Restore cost averaged over the chain position at interruption.
    pub expected_restore_s: f64,
    /// Half a heartbeat interval until the coordinator learns of the event.
    pub expected_requeue_s: f64,
    pub base_s: f64,
}

impl WorkloadOracle {
    pub fn per_interruption_s(&self) -> f64 {
        self.expected_lost_s + self.expected_restore_s + self.expected_requeue_s
    }

    /// Expected overhead in percent after `n` interruptions.
    pub fn overhead_pct(&self, n: u32) -> f64 {
        f64::from(n) * self.per_interruption_s() / self.base_s * 100.0
    }
}

pub fn workload_oracle(w: &SimWorkload, restore: RestoreModel, full_every_n: u32, heartbeat_interval_s: u64) -> WorkloadOracle {
    let full = payload_bytes(CheckpointMode::Full, &w.state);
    let delta = payload_bytes(CheckpointMode::Incremental, &w.state);
    let chain = match w.spec.checkpoint_mode {
        CheckpointMode::Full => 1,
        CheckpointMode::Incremental => full_every_n.max(1),
    };
    let total_ms: f64 = (0..chain)
        .map(|k| restore.restore_cost_ms(full + u64::from(k) * delta) as f64)
        .sum();
    WorkloadOracle {
        expected_lost_s: w.spec.checkpoint_interval_s as f64 / 2.0,
        expected_restore_s: total_ms / f64::from(chain) / SECOND as f64,
        expected_requeue_s: heartbeat_interval_s as f64 / 2.0,
        base_s: w.spec.estimated_duration_s as f64,
    }
}

/// Probability that a job displaced by a temporary outage with mean
/// `mean_outage_s` is back on its node within the affinity window.
pub fn return_probability(window_s: f64, mean_outage_s: f64) -> f64 {
    1.0 - (-window_s / mean_outage_s).exp()
}

/// Expected number of interruptions over `duration_s` at `rate_per_day`.
pub fn expected_interruptions(rate_per_day: f64, duration_s: f64) -> f64 {
    rate_per_day * duration_s / 86_400.0
}
