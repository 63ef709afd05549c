//! Scenario configuration: JSON schema, validation with field-level
//! diagnostics, and file loading.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::COIN;

/// How deposit values are drawn for the workload. All values are quantized
/// to the configured grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDist {
    /// Log-uniform over [min_zat, max_zat], quantized to the grid. Naive
    /// uniqueness is common under this default.
    LogUniform { min_zat: u64, max_zat: u64 },
    /// Globally unique values: start, start + step, start + 2*step, ...
    UniqueGrid { start_zat: u64, step_zat: u64 },
    /// Uniform choice from a fixed list of denominations.
    Denominations { values_zat: Vec<u64> },
}

impl Default for ValueDist {
    fn default() -> Self {
        ValueDist::LogUniform { min_zat: COIN / 100, max_zat: 100 * COIN }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropperPos {
    pub cascade: u32,
    pub hop: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixnetConfig {
    pub cascades: u32,
    /// Mixes per cascade (L).
    pub length: u32,
    /// Mean per-hop mixing delay in ticks (mu).
    pub delay_mean_ticks: f64,
    /// Per-user loop cover rate in packets per tick (lambda).
    #[serde(default)]
    pub cover_rate_per_tick: f64,
    #[serde(default)]
    pub droppers: Vec<DropperPos>,
    /// How many distinct cascades each transaction is sent through (k).
    #[serde(default = "default_redundancy")]
    pub redundancy: u32,
}

fn default_redundancy() -> u32 {
    1
}

fn default_grid() -> u64 {
    COIN / 100
}

fn default_initial_balance() -> u64 {
    200 * COIN
}

fn default_scenario_id() -> String {
    "scenario".to_string()
}

fn default_duration() -> u64 {
    100_000
}

fn default_deposits_per_user() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_scenario_id")]
    pub scenario_id: String,
    pub users: u32,
    #[serde(default = "default_deposits_per_user")]
    pub deposits_per_user: u32,
    #[serde(default)]
    pub value_dist: ValueDist,
    /// Fraction of users who take splitting advice; the rest are naive.
    #[serde(default)]
    pub advised_fraction: f64,
    /// Probability a deposit is routed through an intermediate private (ZZ)
    /// hop before withdrawal.
    #[serde(default)]
    pub zz_hop_prob: f64,
    /// None means users broadcast directly to the P2P network.
    #[serde(default)]
    pub mixnet: Option<MixnetConfig>,
    #[serde(default = "default_grid")]
    pub grid_zatoshi: u64,
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration_ticks: u64,
    #[serde(default = "default_initial_balance")]
    pub initial_balance_zat: u64,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if self.users == 0 {
            errs.push("users: must be positive".to_string());
        }
        if self.deposits_per_user == 0 {
            errs.push("deposits_per_user: must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.advised_fraction) {
            errs.push("advised_fraction: must be in [0, 1]".to_string());
        }
        if !(0.0..=1.0).contains(&self.zz_hop_prob) {
            errs.push("zz_hop_prob: must be in [0, 1]".to_string());
        }
        if self.grid_zatoshi == 0 {
            errs.push("grid_zatoshi: must be positive".to_string());
        }
        if self.duration_ticks < 4 {
            errs.push("duration_ticks: must be at least 4".to_string());
        }
        if self.initial_balance_zat == 0 {
            errs.push("initial_balance_zat: must be positive".to_string());
        }
        match &self.value_dist {
            ValueDist::LogUniform { min_zat, max_zat } => {
                if *min_zat < 2 {
                    errs.push("value_dist.min_zat: must be at least 2".to_string());
                }
                if max_zat < min_zat {
                    errs.push("value_dist.max_zat: must be >= min_zat".to_string());
                }
                if *max_zat > self.initial_balance_zat {
                    errs.push("value_dist.max_zat: exceeds initial_balance_zat".to_string());
                }
            }
            ValueDist::UniqueGrid { start_zat, step_zat } => {
                if *start_zat < 2 {
                    errs.push("value_dist.start_zat: must be at least 2".to_string());
                }
                if *step_zat == 0 {
                    errs.push("value_dist.step_zat: must be positive".to_string());
                }
            }
            ValueDist::Denominations { values_zat } => {
                if values_zat.is_empty() {
                    errs.push("value_dist.values_zat: must not be empty".to_string());
                }
                if values_zat.iter().any(|&v| v < 2) {
                    errs.push("value_dist.values_zat: every value must be at least 2".to_string());
                }
            }
        }
        if let Some(m) = &self.mixnet {
            if m.cascades == 0 {
                errs.push("mixnet.cascades: must be positive".to_string());
            }
            if m.length == 0 {
                errs.push("mixnet.length: must be positive".to_string());
            }
            if m.delay_mean_ticks <= 0.0 {
                errs.push("mixnet.delay_mean_ticks: must be positive".to_string());
            }
            if m.cover_rate_per_tick < 0.0 {
                errs.push("mixnet.cover_rate_per_tick: must be non-negative".to_string());
            }
            if m.redundancy == 0 || m.redundancy > m.cascades {
                errs.push("mixnet.redundancy: must be in [1, cascades]".to_string());
            }
            for (i, d) in m.droppers.iter().enumerate() {
                if d.cascade >= m.cascades || d.hop >= m.length {
                    errs.push(format!("mixnet.droppers[{i}]: position out of range"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    pub fn from_path(path: &Path) -> Result<ScenarioConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let config: ScenarioConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ScenarioConfig {
        ScenarioConfig {
            scenario_id: "t".to_string(),
            users: 10,
            deposits_per_user: 1,
            value_dist: ValueDist::default(),
            advised_fraction: 0.0,
            zz_hop_prob: 0.0,
            mixnet: None,
            grid_zatoshi: default_grid(),
            seed: 1,
            duration_ticks: 10_000,
            initial_balance_zat: default_initial_balance(),
        }
    }

    #[test]
    fn valid_config_passes() {
        base().validate().unwrap();
    }

    #[test]
    fn invalid_fields_are_reported_together() {
        let mut c = base();
        c.users = 0;
        c.advised_fraction = 1.5;
        match c.validate() {
            Err(ConfigError::Invalid(errs)) => {
                assert!(errs.iter().any(|e| e.starts_with("users:")));
                assert!(errs.iter().any(|e| e.starts_with("advised_fraction:")));
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn redundancy_beyond_cascades_is_invalid() {
        let mut c = base();
        c.mixnet = Some(MixnetConfig {
            cascades: 2,
            length: 3,
            delay_mean_ticks: 50.0,
            cover_rate_per_tick: 0.0,
            droppers: vec![],
            redundancy: 3,
        });
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let json = r#"{"users": 5, "seed": 1, "bogus": true}"#;
        assert!(serde_json::from_str::<ScenarioConfig>(json).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = base();
        let parsed: ScenarioConfig =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, parsed);
    }
}
