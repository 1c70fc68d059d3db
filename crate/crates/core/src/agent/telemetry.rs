use crate::domain::{GpuDescriptor, GpuTelemetry, Millis, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("telemetry probe unavailable: {0}")]
pub struct ProbeUnavailable(pub String);

/// A GPU and the memory its workload requires, if one is running on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GpuLoad {
    pub gpu_index: u32,
    pub busy_mib: Option<u64>,
}

pub trait TelemetryProbe: Send {
    fn sample(&mut self, node: NodeId, gpus: &[GpuDescriptor], load: &[GpuLoad], now: Millis)
        -> Result<Vec<GpuTelemetry>, ProbeUnavailable>;
}

/// Idle GPUs read 0 % and 0 MiB; a busy GPU reads 95 % and the workload's
/// required memory.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedProbe;

impl TelemetryProbe for SimulatedProbe {
    fn sample(&mut self, node: NodeId, gpus: &[GpuDescriptor], load: &[GpuLoad], now: Millis)
        -> Result<Vec<GpuTelemetry>, ProbeUnavailable> {
        Ok(gpus
            .iter()
            .map(|g| {
                let busy = load.iter().find(|l| l.gpu_index == g.index).and_then(|l| l.busy_mib);
                let (util_pct, mem_used_mib, temp_c, power_w) = match busy {
                    Some(mib) => (95.0, mib.min(g.memory_mib), 71, 250.0),
                    None => (0.0, 0, 34, 28.0),
                };
                GpuTelemetry { node, gpu_index: g.index, util_pct, mem_used_mib, temp_c, power_w, sampled_at: now }
            })
            .collect())
    }
}

/// Always fails; liveness must not depend on telemetry.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnavailableProbe;

impl TelemetryProbe for UnavailableProbe {
    fn sample(&mut self, _: NodeId, _: &[GpuDescriptor], _: &[GpuLoad], _: Millis)
        -> Result<Vec<GpuTelemetry>, ProbeUnavailable> {
        Err(ProbeUnavailable("no driver".into()))
    }
}
