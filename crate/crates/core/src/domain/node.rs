use serde::{Deserialize, Serialize};

use super::{IllegalTransition, Millis, NodeId, StateMachine};

/// CUDA compute capability. Field order gives the total order used by
/// constraint filtering: `(a, b) >= (c, d)` iff `a > c || (a == c && b >= d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComputeCapability(pub u32, pub u32);

impl ComputeCapability {
    pub fn major(self) -> u32 {
        self.0
    }

    pub fn minor(self) -> u32 {
        self.1
    }
}

impl std::fmt::Display for ComputeCapability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuDescriptor {
    pub index: u32,
    pub model: String,
    pub memory_mib: u64,
    pub compute_capability: ComputeCapability,
}

impl GpuDescriptor {
    pub fn validate(&self) -> Result<(), String> {
        if self.memory_mib == 0 {
            return Err(format!("gpu {} reports zero memory", self.index));
        }
        if self.compute_capability.major() < 1 {
            return Err(format!("gpu {} has compute capability major 0", self.index));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeState {
    Registering,
    Active,
    Paused,
    Draining,
    Unavailable,
    Departed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeEvent {
    /// Registration accepted.
    Activate,
    Pause,
    Resume,
    Drain,
    /// Drain finished (or a draining node vanished).
    Depart,
    /// Third consecutive missed heartbeat.
    HeartbeatLoss,
    Reconnect,
    Rejoin,
}

impl NodeEvent {
    pub const ALL: [NodeEvent; 8] = [
        NodeEvent::Activate,
        NodeEvent::Pause,
        NodeEvent::Resume,
        NodeEvent::Drain,
        NodeEvent::Depart,
        NodeEvent::HeartbeatLoss,
        NodeEvent::Reconnect,
        NodeEvent::Rejoin,
    ];
}

impl NodeState {
    pub const ALL: [NodeState; 6] = [
        NodeState::Registering,
        NodeState::Active,
        NodeState::Paused,
        NodeState::Draining,
        NodeState::Unavailable,
        NodeState::Departed,
    ];

    /// Whether the node can receive new allocations.
    pub fn accepts_work(self) -> bool {
        self == NodeState::Active
    }

    /// Whether the node is subject to heartbeat liveness checks.
    pub fn is_monitored(self) -> bool {
        matches!(self, NodeState::Active | NodeState::Paused)
    }
}

impl StateMachine for NodeState {
    type Event = NodeEvent;

    fn transition(self, event: NodeEvent) -> Result<Self, IllegalTransition> {
        use NodeEvent as E;
        use NodeState as S;
        let next = match (self, event) {
            (S::Registering, E::Activate) => S::Active,
            (S::Active, E::Pause) => S::Paused,
            (S::Paused, E::Resume) => S::Active,
            (S::Active | S::Paused, E::Drain) => S::Draining,
            (S::Draining, E::Depart) => S::Departed,
            (S::Active | S::Paused, E::HeartbeatLoss) => S::Unavailable,
            (S::Unavailable, E::Reconnect) => S::Active,
            (S::Departed, E::Rejoin) => S::Registering,
            _ => return Err(IllegalTransition::new(self, event)),
        };
        Ok(next)
    }
}

/// What the agent itself reports about its participation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdvertisedState {
    Active,
    Paused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub gpus: Vec<GpuDescriptor>,
    pub state: NodeState,
    pub latency_ms: f64,
    /// Predicted interruptions per day.
    pub volatility_score: f64,
    pub last_heartbeat_seq: u64,
    pub missed_heartbeats: u32,
    pub auth_token_hash: String,
    pub last_heartbeat_at: Millis,
    pub advertised: AdvertisedState,
    pub interruptions_today: u32,
    /// Set while a coordinator-initiated drain is outstanding.
    pub drain_requested: Option<DrainRequest>,
    /// Set while a relayed kill-switch request awaits delivery.
    #[serde(default)]
    pub kill_requested: Option<DrainRequest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrainRequest {
    pub grace_s: u64,
    pub requested_at: Millis,
}

impl NodeRecord {
    /// A freshly registered node in `Registering` with a clean heartbeat history.
    pub fn new(id: NodeId, gpus: Vec<GpuDescriptor>, latency_ms: f64, volatility_score: f64, at: Millis) -> Self {
        Self {
            id,
            gpus,
            state: NodeState::Registering,
            latency_ms,
            volatility_score,
            last_heartbeat_seq: 0,
            missed_heartbeats: 0,
            auth_token_hash: String::new(),
            last_heartbeat_at: at,
            advertised: AdvertisedState::Active,
            interruptions_today: 0,
            drain_requested: None,
            kill_requested: None,
        }
    }

    pub fn gpu(&self, index: u32) -> Option<&GpuDescriptor> {
        self.gpus.iter().find(|g| g.index == index)
    }

    /// Checks the record-level invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.missed_heartbeats > 3 {
            return Err(format!("node {} missed_heartbeats {} > 3", self.id, self.missed_heartbeats));
        }
        if self.state == NodeState::Unavailable && self.missed_heartbeats != 3 {
            return Err(format!("node {} unavailable with {} misses", self.id, self.missed_heartbeats));
        }
        if !(self.volatility_score >= 0.0) {
            return Err(format!("node {} volatility {}", self.id, self.volatility_score));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuTelemetry {
    pub node: NodeId,
    pub gpu_index: u32,
    pub util_pct: f64,
    pub mem_used_mib: u64,
    pub temp_c: i32,
    pub power_w: f64,
    pub sampled_at: Millis,
}

impl GpuTelemetry {
    pub fn validate_against(&self, gpu: &GpuDescriptor) -> Result<(), String> {
        if !(0.0..=100.0).contains(&self.util_pct) {
            return Err(format!("util_pct {} outside [0,100]", self.util_pct));
        }
        if self.mem_used_mib > gpu.memory_mib {
            return Err(format!(
                "mem_used_mib {} exceeds gpu memory {}",
                self.mem_used_mib, gpu.memory_mib
            ));
        }
        if !(self.power_w >= 0.0) {
            return Err(format!("negative power {}", self.power_w));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capability_order_is_lexicographic() {
        assert!(ComputeCapability(8, 0) > ComputeCapability(7, 5));
        assert!(ComputeCapability(8, 6) >= ComputeCapability(8, 6));
        assert!(ComputeCapability(8, 6) > ComputeCapability(8, 0));
        assert!(ComputeCapability(7, 9) < ComputeCapability(8, 0));
    }

    #[test]
    fn documented_node_transitions() {
        assert_eq!(NodeState::Paused.transition(NodeEvent::Resume), Ok(NodeState::Active));
        assert_eq!(NodeState::Active.transition(NodeEvent::HeartbeatLoss), Ok(NodeState::Unavailable));
        assert!(NodeState::Departed.transition(NodeEvent::Pause).is_err());
        assert_eq!(NodeState::Departed.transition(NodeEvent::Rejoin), Ok(NodeState::Registering));
    }

    #[test]
    fn node_state_table_is_closed() {
        let mut legal = 0;
        for s in NodeState::ALL {
            for e in NodeEvent::ALL {
                match s.transition(e) {
                    Ok(_) => legal += 1,
                    Err(err) => {
                        assert_eq!(err.from, format!("{s:?}"));
                        assert_eq!(err.event, format!("{e:?}"));
                    }
                }
            }
        }
        // Registering→Active, Active↔Paused (2), Active/Paused→Draining (2),
        // Draining→Departed, Active/Paused→Unavailable (2), Unavailable→Active,
        // Departed→Registering.
        assert_eq!(legal, 10);
    }

    #[test]
    fn telemetry_bounds() {
        let gpu = GpuDescriptor {
            index: 0,
            model: "A100".into(),
            memory_mib: 81920,
            compute_capability: ComputeCapability(8, 0),
        };
        let mut t = GpuTelemetry {
            node: NodeId::from_u128(1),
            gpu_index: 0,
            util_pct: 50.0,
            mem_used_mib: 1024,
            temp_c: 60,
            power_w: 250.0,
            sampled_at: 0,
        };
        assert!(t.validate_against(&gpu).is_ok());
        t.mem_used_mib = 90000;
        assert!(t.validate_against(&gpu).is_err());
        t.mem_used_mib = 0;
        t.util_pct = 101.0;
        assert!(t.validate_against(&gpu).is_err());
    }
}
