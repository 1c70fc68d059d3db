use serde::{Deserialize, Serialize};

use crate::coordinator::placement::{Placement, PlacementPolicy};
use crate::coordinator::state::CoordinatorState;
use crate::domain::{resolve_chain, CheckpointManifest, JobMode, JobRecord, Millis, NodeId};

use super::policy::RestoreModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MigrationOutcome {
    Reschedule {
        node: NodeId,
        gpu_index: u32,
        via_affinity: bool,
        manifests: Vec<CheckpointManifest>,
        estimated_downtime_ms: Millis,
    },
    /// No eligible node; the job waits in the queue with its affinity tag.
    Requeue { stateless: bool },
    /// Interactive session with no checkpoint to resume from.
    Lost,
}

/// Decides where a displaced job goes next using the coordinator's placement
/// policy over `state`.
pub fn plan_migration(
    job: &JobRecord,
    state: &CoordinatorState,
    policy: &dyn PlacementPolicy,
    now: Millis,
    model: &RestoreModel,
    launch_estimate_ms: Millis,
) -> MigrationOutcome {
    let chain: Vec<CheckpointManifest> = job
        .latest_checkpoint()
        .and_then(|tail| resolve_chain(&job.checkpoints, tail))
        .map(|c| c.into_iter().cloned().collect())
        .unwrap_or_default();
    if chain.is_empty() && job.spec.mode == JobMode::Interactive {
        return MigrationOutcome::Lost;
    }
    match policy.place(job, state, now) {
        Some(Placement { node, gpu_index, via_affinity }) => {
            let bytes: u64 = chain.iter().map(|m| m.payload_bytes).sum();
            let restore = if chain.is_empty() { 0 } else { model.restore_cost_ms(bytes) };
            MigrationOutcome::Reschedule {
                node,
                gpu_index,
                via_affinity,
                manifests: chain,
                estimated_downtime_ms: restore + launch_estimate_ms,
            }
        }
        None => MigrationOutcome::Requeue { stateless: chain.is_empty() },
    }
}
