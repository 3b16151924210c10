//! Run configuration: built-in defaults, optionally overridden by a TOML
//! file, then by command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use segsearch::policy::PolicyTrainer;
use segsearch::synth::SynthConfig;
use segsearch::value::ValueTrainer;
use segsearch::EngineConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every model initialisation, rollout and sampler seed is
    /// derived from it.
    pub seed: u64,
    pub engine: EngineConfig,
    pub policy_training: PolicyTrainer,
    pub value_training: ValueTrainer,
    /// Fraction of value-training samples built from random actions.
    pub value_random_fraction: f64,
    /// Custom corpus for `synth-gen --preset custom`.
    pub synth: Option<SynthConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            engine: EngineConfig::default(),
            policy_training: PolicyTrainer::default(),
            value_training: ValueTrainer::default(),
            value_random_fraction: 0.5,
            synth: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.engine.small_step, 4);
        assert_eq!(cfg.engine.large_step, 21);
        assert_eq!(cfg.engine.alpha, 0.1);
        assert_eq!(cfg.engine.confidence_threshold, 0.98);
        assert_eq!(cfg.engine.c_puct, 1.5);
        assert_eq!(cfg.engine.num_simulations, 10);
        assert_eq!(cfg.value_random_fraction, 0.5);
        assert_eq!(cfg.value_training.curriculum, (20..=100).step_by(10).collect::<Vec<_>>());
    }

    #[test]
    fn partial_toml_keeps_other_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 7\n[engine]\nc_puct = 2.0\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.engine.c_puct, 2.0);
        assert_eq!(cfg.engine.num_simulations, 10);
        assert!(toml::from_str::<RunConfig>("bogus = 1\n").is_err());
    }
}
