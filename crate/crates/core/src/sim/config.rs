use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{validate_job_spec, ComputeCapability, JobSpec};
use crate::resilience::WorkloadStateModel;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid simulation config: {0}")]
pub struct InvalidConfig(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimNode {
    pub name: String,
    pub gpu_count: u32,
    pub memory_mib: u64,
    pub capability: ComputeCapability,
    pub latency_ms: f64,
}

/// Probabilities of the three interruption kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindMix {
    pub scheduled: f64,
    pub emergency: f64,
    pub temporary: f64,
}

impl Default for KindMix {
    fn default() -> Self {
        Self { scheduled: 0.4, emergency: 0.2, temporary: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationDistribution {
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationDist {
    pub mean_s: f64,
    #[serde(default = "exponential")]
    pub distribution: DurationDistribution,
}

fn exponential() -> DurationDistribution {
    DurationDistribution::Exponential
}

/// One workload class: `count` identical jobs arriving from `arrival_s`,
/// `arrival_every_s` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimWorkload {
    pub name: String,
    #[serde(default = "one")]
    pub count: u32,
    #[serde(default)]
    pub arrival_s: u64,
    #[serde(default)]
    pub arrival_every_s: u64,
    /// Owner node name for the static-ownership baseline.
    #[serde(default)]
    pub owner: Option<String>,
    pub spec: JobSpec,
    pub state: WorkloadStateModel,
    #[serde(default = "default_ckpt_base")]
    pub checkpoint_base_s: f64,
    #[serde(default = "default_ckpt_per_gib")]
    pub checkpoint_per_gib_s: f64,
}

fn one() -> u32 {
    1
}
fn default_ckpt_base() -> f64 {
    5.0
}
fn default_ckpt_per_gib() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub nodes: Vec<SimNode>,
    /// Interruptions per day, one entry per node.
    pub interruption_rates: Vec<f64>,
    #[serde(default)]
    pub kind_mix: KindMix,
    pub temporary_duration_dist: DurationDist,
    pub workloads: Vec<SimWorkload>,
    pub link_bandwidth_mbps: u64,
    pub campus_bandwidth_mbps: u64,
    pub sim_duration_s: u64,

    #[serde(default = "default_heartbeat")]
    pub heartbeat_interval_s: u64,
    #[serde(default = "default_grace")]
    pub grace_s: u64,
    #[serde(default = "default_full_every_n")]
    pub full_every_n: u32,
    #[serde(default = "default_restore_overhead")]
    pub restore_overhead_s: u64,
    #[serde(default = "default_affinity_window")]
    pub affinity_window_s: u64,
    /// How long a node stays away after a scheduled or emergency departure.
    #[serde(default = "default_offline")]
    pub offline_duration_dist: DurationDist,
    /// Emergency departures send a notice before disconnecting.
    #[serde(default)]
    pub emergency_notice: bool,
    /// Allow rates outside 0.5..=3.2 per day.
    #[serde(default)]
    pub allow_any_rate: bool,
}

fn default_heartbeat() -> u64 {
    10
}
fn default_grace() -> u64 {
    60
}
fn default_full_every_n() -> u32 {
    10
}
fn default_restore_overhead() -> u64 {
    5
}
fn default_affinity_window() -> u64 {
    1800
}
fn default_offline() -> DurationDist {
    DurationDist { mean_s: 3600.0, distribution: DurationDistribution::Exponential }
}

pub const RATE_RANGE: std::ops::RangeInclusive<f64> = 0.5..=3.2;

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, InvalidConfig> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, InvalidConfig> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, InvalidConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| InvalidConfig(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn allow_list(&self) -> BTreeSet<String> {
        self.workloads.iter().map(|w| w.spec.image_digest.clone()).collect()
    }

    pub fn job_count(&self) -> usize {
        self.workloads.iter().map(|w| w.count as usize).sum()
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn validate(&self) -> Result<(), InvalidConfig> {
        let err = |m: String| Err(InvalidConfig(m));
        if self.interruption_rates.len() != self.nodes.len() {
            return err(format!(
                "interruption_rates has {} entries for {} nodes",
                self.interruption_rates.len(),
                self.nodes.len()
            ));
        }
        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if n.gpu_count == 0 || n.memory_mib == 0 {
                return err(format!("node {} needs at least one GPU with memory", n.name));
            }
            if !names.insert(n.name.as_str()) {
                return err(format!("duplicate node name {}", n.name));
            }
            if !(n.latency_ms.is_finite() && n.latency_ms >= 0.0) {
                return err(format!("node {} latency must be nonnegative", n.name));
            }
        }
        for (n, &r) in self.nodes.iter().zip(&self.interruption_rates) {
            if !(r.is_finite() && r >= 0.0) {
                return err(format!("node {} rate {r} is not a nonnegative number", n.name));
            }
            if r > 0.0 && !self.allow_any_rate && !RATE_RANGE.contains(&r) {
                return err(format!("node {} rate {r}/day outside 0.5..=3.2 (set allow_any_rate)", n.name));
            }
        }
        let k = self.kind_mix;
        if [k.scheduled, k.emergency, k.temporary].iter().any(|p| !(0.0..=1.0).contains(p)) {
            return err("kind_mix probabilities must lie in [0, 1]".into());
        }
        if (k.scheduled + k.emergency + k.temporary - 1.0).abs() > 1e-9 {
            return err("kind_mix probabilities must sum to 1".into());
        }
        for d in [self.temporary_duration_dist, self.offline_duration_dist] {
            if !(d.mean_s.is_finite() && d.mean_s > 0.0) {
                return err("duration means must be positive".into());
            }
        }
        if self.link_bandwidth_mbps == 0 || self.campus_bandwidth_mbps == 0 {
            return err("bandwidths must be positive".into());
        }
        if self.sim_duration_s == 0 || self.heartbeat_interval_s == 0 || self.full_every_n == 0 {
            return err("sim_duration_s, heartbeat_interval_s and full_every_n must be positive".into());
        }
        let allow = self.allow_list();
        let mut images = BTreeSet::new();
        for w in &self.workloads {
            validate_job_spec(&w.spec, &allow).map_err(|e| InvalidConfig(format!("workload {}: {e}", w.name)))?;
            w.state.validate().map_err(|e| InvalidConfig(format!("workload {}: {e}", w.name)))?;
            if let Some(owner) = &w.owner {
                if self.node_index(owner).is_none() {
                    return err(format!("workload {} owner {owner} is not a node", w.name));
                }
            }
            if !images.insert(w.spec.image_ref.as_str()) {
                return err(format!("workload {}: image_ref {} is shared with another workload", w.name, w.spec.image_ref));
            }
            if w.checkpoint_base_s < 0.0 || w.checkpoint_per_gib_s < 0.0 {
                return err(format!("workload {}: checkpoint costs must be nonnegative", w.name));
            }
        }
        Ok(())
    }
}
