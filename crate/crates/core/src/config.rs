//! Reward weights and the shared TOML configuration file.
//!
//! One file carries every section used by the CLI:
//!
//! ```toml
//! [domain]
//! max_lanes = 8
//!
//! [reward]
//! alpha = 0.3333333333333333
//! lambda = 0.5
//! smoothness_mode = "raw_clamped"
//!
//! [rules.lane_count]
//! max_step = 1
//!
//! [noise.tasks.lane_count]
//! substitution = 0.3
//! mode = "burst"
//!
//! [trainer]
//! group_size = 8
//! ```
//!
//! Every section and every key is optional; missing values take their defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::consistency::{RuleError, RuleTableConfig, TransitionRuleSet};
use crate::grpo::TrainerParams;
use crate::schema::{DomainLimits, Field, Task};
use crate::synth::{GeneratorParams, NoiseModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error("invalid reward config: {0}")]
    Reward(String),
    #[error("invalid noise config: {0}")]
    Noise(String),
    #[error("invalid generator config: {0}")]
    Generator(String),
    #[error("invalid trainer config: {0}")]
    Trainer(String),
    #[error("invalid template table: {0}")]
    Templates(String),
}

/// Hierarchy level a task's frame reward is credited to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Scene,
    Relational,
    Semantic,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Scene, Layer::Relational, Layer::Semantic];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothnessMode {
    Raw,
    RawClamped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Scene layer weight.
    pub alpha: f64,
    /// Relational layer weight.
    pub beta: f64,
    /// Semantic layer weight.
    pub gamma: f64,
    /// Smoothness share of the temporal reward, in `[0, 1]`.
    pub lambda: f64,
    pub lambda_frame: f64,
    pub lambda_temporal: f64,
    pub smoothness_mode: SmoothnessMode,
    pub smoothness_attributes: Vec<Field>,
    pub layer_assignment: BTreeMap<Task, Layer>,
    pub ordinal_partial_credit: bool,
    /// Also require both frames of a pair to pass intra-frame logic for the
    /// pair to count as plausible.
    pub plausibility_includes_frame_logic: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
            lambda: 0.5,
            lambda_frame: 0.5,
            lambda_temporal: 0.5,
            smoothness_mode: SmoothnessMode::RawClamped,
            smoothness_attributes: vec![
                Field::LaneCount,
                Field::EgoLaneIndex,
                Field::TrafficCondition,
                Field::LaneChangeLeft,
                Field::LaneChangeRight,
            ],
            layer_assignment: default_layers(),
            ordinal_partial_credit: false,
            plausibility_includes_frame_logic: false,
        }
    }
}

pub fn default_layers() -> BTreeMap<Task, Layer> {
    BTreeMap::from([
        (Task::LaneCount, Layer::Scene),
        (Task::EgoLaneIndex, Layer::Scene),
        (Task::Topology, Layer::Relational),
        (Task::LaneChange, Layer::Relational),
        (Task::RoadScene, Layer::Semantic),
        (Task::TrafficCondition, Layer::Semantic),
    ])
}

impl RewardConfig {
    pub fn layer_weight(&self, layer: Layer) -> f64 {
        match layer {
            Layer::Scene => self.alpha,
            Layer::Relational => self.beta,
            Layer::Semantic => self.gamma,
        }
    }

    pub fn tasks_in(&self, layer: Layer) -> impl Iterator<Item = Task> + '_ {
        Task::ALL
            .into_iter()
            .filter(move |t| self.layer_assignment.get(t) == Some(&layer))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |msg: String| Err(ConfigError::Reward(msg));
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda_frame", self.lambda_frame),
            ("lambda_temporal", self.lambda_temporal),
        ] {
            if !w.is_finite() || w < 0.0 {
                return err(format!("{name} must be a finite non-negative number, got {w}"));
            }
        }
        if self.alpha + self.beta + self.gamma <= 0.0 {
            return err("alpha + beta + gamma must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return err(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.smoothness_attributes.is_empty() {
            return err("smoothness_attributes must not be empty".into());
        }
        if let Some(f) = self.smoothness_attributes.iter().find(|f| !f.is_ordinal()) {
            return err(format!("{f} is categorical and cannot be smoothed"));
        }
        for task in Task::ALL {
            if !self.layer_assignment.contains_key(&task) {
                return err(format!("layer_assignment is missing {task}"));
            }
        }
        for layer in Layer::ALL {
            if self.layer_weight(layer) > 0.0 && self.tasks_in(layer).next().is_none() {
                return err(format!("{layer:?} layer has weight but no tasks"));
            }
        }
        Ok(())
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub domain: DomainLimits,
    pub reward: RewardConfig,
    pub rules: RuleTableConfig,
    pub noise: NoiseModel,
    pub generator: GeneratorParams,
    pub trainer: TrainerParams,
    /// Optional path to a QA template table, relative to the working directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.reward.validate()?;
        cfg.rule_set()?;
        cfg.noise_model()?;
        cfg.trainer.validate()?;
        cfg.generator.validate().map_err(ConfigError::Generator)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Config::parse(&text)
    }

    pub fn rule_set(&self) -> Result<TransitionRuleSet, ConfigError> {
        Ok(TransitionRuleSet::from_config(&self.rules)?)
    }

    pub fn noise_model(&self) -> Result<NoiseModel, ConfigError> {
        self.noise.validate().map_err(ConfigError::Noise)?;
        Ok(self.noise.clone())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Stable digest of the effective configuration, for report metadata.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}
