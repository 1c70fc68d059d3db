use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp};

use crate::domain::{InterruptionEvent, InterruptionKind, Millis, NodeId, DAY, SECOND};

use super::config::{InvalidConfig, SimConfig};

/// Deterministic id of the `index`-th configured node.
pub fn sim_node_id(index: usize) -> NodeId {
    NodeId::from_u128(0x5349_4d00_0000_0000_0000_0000_0000_0000 | (index as u128 + 1))
}

/// Independent random stream per purpose and node, derived from the seed.
pub(crate) fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(purpose << 32 | index);
    rng
}

pub(crate) const STREAM_TRACE: u64 = 1;
pub(crate) const STREAM_OFFLINE: u64 = 2;
pub(crate) const STREAM_PHASE: u64 = 3;

/// Interruption events for every node over the simulated horizon, ordered by
/// time then node.
pub fn generate_trace(config: &SimConfig) -> Result<Vec<InterruptionEvent>, InvalidConfig> {
    config.validate()?;
    let horizon = config.sim_duration_s * SECOND;
    let temp = Exp::new(1.0 / config.temporary_duration_dist.mean_s).map_err(|e| InvalidConfig(e.to_string()))?;
    let mut out = Vec::new();
    for (i, &rate) in config.interruption_rates.iter().enumerate() {
        if rate <= 0.0 {
            continue;
        }
        let mut rng = stream(config.seed, STREAM_TRACE, i as u64);
        let gap = Exp::new(rate / DAY as f64).map_err(|e| InvalidConfig(e.to_string()))?;
        let node = sim_node_id(i);
        let mut t = 0.0f64;
        loop {
            t += gap.sample(&mut rng);
            if t >= horizon as f64 {
                break;
            }
            let u: f64 = rng.random();
            let mix = config.kind_mix;
            let kind = if u < mix.scheduled {
                InterruptionKind::ScheduledDeparture
            } else if u < mix.scheduled + mix.emergency {
                InterruptionKind::EmergencyDeparture
            } else {
                let d: f64 = temp.sample(&mut rng);
                InterruptionKind::TemporaryUnavailability { duration_s: (d.round() as u64).max(1) }
            };
            out.push(InterruptionEvent { kind, node, at: t.floor() as Millis });
        }
    }
    out.sort_by_key(|e| (e.at, e.node));
    Ok(out)
}
