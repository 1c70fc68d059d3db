use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{normalize_digest, Millis, SECOND};

/// Fixed by design: a node is unavailable after three silent intervals.
pub const MISS_THRESHOLD: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub heartbeat_interval_s: u64,
    pub miss_threshold: u32,
    pub weight_volatility: f64,
    pub weight_latency: f64,
    pub grace_default_s: u64,
    pub affinity_window_default_s: u64,
    pub volatility_alpha: f64,
    pub volatility_prior: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            heartbeat_interval_s: 10,
            miss_threshold: MISS_THRESHOLD,
            weight_volatility: 0.5,
            weight_latency: 0.5,
            grace_default_s: 60,
            affinity_window_default_s: 1800,
            volatility_alpha: 0.3,
            volatility_prior: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError(m.to_string()));
        if self.heartbeat_interval_s == 0 {
            return err("heartbeat_interval_s must be positive");
        }
        if self.miss_threshold != MISS_THRESHOLD {
            return err("miss_threshold is fixed at 3");
        }
        if !(0.0..=1.0).contains(&self.weight_volatility) || !(0.0..=1.0).contains(&self.weight_latency) {
            return err("score weights must lie in [0, 1]");
        }
        if (self.weight_volatility + self.weight_latency - 1.0).abs() > 1e-9 {
            return err("weight_volatility + weight_latency must equal 1");
        }
        if !(self.volatility_alpha > 0.0 && self.volatility_alpha <= 1.0) {
            return err("volatility_alpha must lie in (0, 1]");
        }
        if !(self.volatility_prior >= 0.0 && self.volatility_prior.is_finite()) {
            return err("volatility_prior must be a nonnegative number");
        }
        Ok(())
    }

    pub fn heartbeat_interval(&self) -> Millis {
        self.heartbeat_interval_s * SECOND
    }

    /// Builds a config with `weight_latency` derived as `1 - w_v`.
    pub fn with_volatility_weight(mut self, w_v: f64) -> Self {
        self.weight_volatility = w_v;
        self.weight_latency = 1.0 - w_v;
        self
    }
}

/// On-disk coordinator configuration: the scheduler keys at top level plus
/// the trusted image allow-list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorConfig {
    #[serde(flatten)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub allow_list: BTreeSet<String>,
}

impl CoordinatorConfig {
    const KEYS: [&'static str; 9] = [
        "heartbeat_interval_s",
        "miss_threshold",
        "weight_volatility",
        "weight_latency",
        "grace_default_s",
        "affinity_window_default_s",
        "volatility_alpha",
        "volatility_prior",
        "allow_list",
    ];

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        if let Some(k) = table.keys().find(|k| !Self::KEYS.contains(&k.as_str())) {
            return Err(ConfigError(format!("unknown key `{k}`")));
        }
        let cfg: CoordinatorConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scheduler.validate()?;
        for d in &self.allow_list {
            if normalize_digest(d).is_none() {
                return Err(ConfigError(format!("allow_list entry {d:?} is not a sha256 digest")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_keys() {
        let text = format!(
            "heartbeat_interval_s = 5\nweight_volatility = 0.7\nweight_latency = 0.3\nallow_list = [\"{}\"]\n",
            "ab".repeat(32)
        );
        let cfg = CoordinatorConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.scheduler.heartbeat_interval_s, 5);
        assert_eq!(cfg.scheduler.grace_default_s, 60);
        assert_eq!(cfg.allow_list.len(), 1);
    }

    #[test]
    fn rejects_degenerate_alpha() {
        for alpha in [0.0, -0.1, 1.5] {
            let cfg = SchedulerConfig { volatility_alpha: alpha, ..Default::default() };
            assert!(cfg.validate().is_err(), "alpha {alpha}");
        }
        let cfg = SchedulerConfig { volatility_alpha: 1.0, ..Default::default() };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_unbalanced_weights_and_miss_threshold() {
        let cfg = SchedulerConfig { weight_volatility: 0.6, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = SchedulerConfig { miss_threshold: 4, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(CoordinatorConfig::from_toml("heartbeat_intervals = 3").is_err());
    }
}
