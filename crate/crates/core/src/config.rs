//! Run configuration: one TOML file describing map, reward, training, ego,
//! and evaluation settings, with dotted-path command-line overrides. The
//! effective (post-override) config serializes back to TOML so every run
//! leaves a reproducible artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ego::{EgoParams, NetworkEgo, RuleBasedEgo};
use crate::reward::RewardParams;
use crate::sim::{EgoPolicy, MapConfig, MapKind};
use crate::train::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Toml(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    pub kind: MapKind,
    pub npc_count: usize,
    /// Overrides the preset's speed limit when set.
    pub v_max: Option<f64>,
}

impl Default for MapSection {
    fn default() -> Self {
        MapSection {
            kind: MapKind::FourWayIntersection,
            npc_count: 3,
            v_max: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub kappa1: f64,
    pub kappa2: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        RewardSection {
            kappa1: 1.0,
            kappa2: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EgoPolicyKind {
    RuleBased,
    Checkpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoSection {
    pub policy: EgoPolicyKind,
    /// Network checkpoint driving the ego when policy = "checkpoint".
    pub checkpoint: Option<PathBuf>,
    pub params: EgoParams,
}

impl Default for EgoSection {
    fn default() -> Self {
        EgoSection {
            policy: EgoPolicyKind::RuleBased,
            checkpoint: None,
            params: EgoParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    pub seed: u64,
    /// Also write per-step trajectory CSVs for the first few episodes.
    pub dump_trajectories: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            episodes: 500,
            seed: 1,
            dump_trajectories: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub map: MapSection,
    pub reward: RewardSection,
    pub train: TrainConfig,
    pub ego: EgoSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("out"),
            map: MapSection::default(),
            reward: RewardSection::default(),
            train: TrainConfig::default(),
            ego: EgoSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.map.npc_count < 1 {
            return Err(ConfigError::Invalid("map.npc_count must be >= 1".into()));
        }
        if let Some(v) = self.map.v_max {
            if !(v > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "map.v_max must be positive, got {v}"
                )));
            }
        }
        if !(self.reward.kappa1 > 0.0) || self.reward.kappa2 < 0.0 {
            return Err(ConfigError::Invalid(
                "reward needs kappa1 > 0 and kappa2 >= 0".into(),
            ));
        }
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
        self.ego
            .params
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("ego: {e}")))?;
        if self.ego.policy == EgoPolicyKind::Checkpoint && self.ego.checkpoint.is_none() {
            return Err(ConfigError::Invalid(
                "ego.policy = \"checkpoint\" requires ego.checkpoint".into(),
            ));
        }
        if self.eval.episodes < 1 {
            return Err(ConfigError::Invalid("eval.episodes must be >= 1".into()));
        }
        Ok(())
    }

    /// Apply `--set section.key=value` overrides, then re-validate. Unknown
    /// keys are rejected by the same strict deserializer that parses files.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, sets: &[S]) -> Result<(), ConfigError> {
        if sets.is_empty() {
            return Ok(());
        }
        let mut value =
            toml::Value::try_from(&*self).map_err(|e| ConfigError::Toml(e.to_string()))?;
        for set in sets {
            let set = set.as_ref();
            let (path, rhs) = set.split_once('=').ok_or_else(|| {
                ConfigError::Invalid(format!("--set expects key=value, got {set:?}"))
            })?;
            let keys: Vec<&str> = path.trim().split('.').collect();
            if keys.iter().any(|k| k.is_empty()) {
                return Err(ConfigError::Invalid(format!("bad override path {path:?}")));
            }
            let mut cur = &mut value;
            for k in &keys[..keys.len() - 1] {
                cur = cur
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::Invalid(format!("{k} is not a section")))?
                    .entry(k.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
            cur.as_table_mut()
                .ok_or_else(|| ConfigError::Invalid(format!("bad override path {path:?}")))?
                .insert(keys[keys.len() - 1].to_string(), parse_leaf(rhs.trim()));
        }
        *self = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Toml(e.to_string()))?;
        self.validate()
    }

    /// The map the run drives on, with config overrides applied.
    pub fn build_map(&self) -> Result<MapConfig, ConfigError> {
        let mut map = MapConfig::preset(self.map.kind);
        if let Some(v) = self.map.v_max {
            map.v_max = v;
        }
        map.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(map)
    }

    /// Crash-reward parameters with the discount and shaping scale taken
    /// from the train section, keeping a single source for each.
    pub fn reward_params(&self) -> RewardParams {
        RewardParams {
            kappa1: self.reward.kappa1,
            kappa2: self.reward.kappa2,
            alpha: self.train.alpha,
            gamma_pbrs: self.train.gamma_pbrs,
        }
    }

    pub fn ego_policy(&self) -> Result<Box<dyn EgoPolicy>, ConfigError> {
        match self.ego.policy {
            EgoPolicyKind::RuleBased => Ok(Box::new(RuleBasedEgo::new(self.ego.params))),
            EgoPolicyKind::Checkpoint => {
                let path = self.ego.checkpoint.as_ref().ok_or_else(|| {
                    ConfigError::Invalid(
                        "ego.policy = \"checkpoint\" requires ego.checkpoint".into(),
                    )
                })?;
                let ego = NetworkEgo::from_checkpoint(path)
                    .map_err(|e| ConfigError::Invalid(format!("ego checkpoint: {e}")))?;
                Ok(Box::new(ego))
            }
        }
    }

    pub fn effective_toml(&self) -> Result<String, ConfigError> {
        toml::to_string_pretty(self).map_err(|e| ConfigError::Toml(e.to_string()))
    }

    /// Write the effective config next to the run's other artifacts.
    pub fn save_effective(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("effective_config.toml");
        std::fs::write(&path, self.effective_toml()?)?;
        Ok(path)
    }
}

/// Parse an override right-hand side with TOML literal syntax, falling back
/// to a bare string (so `--set map.kind=straight_highway` works unquoted).
fn parse_leaf(s: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {s}"))
        .ok()
        .and_then(|t| t.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(s.to_string()))
}
