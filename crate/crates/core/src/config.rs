//! Run configuration: named profiles plus TOML overrides.

use serde::{Deserialize, Serialize};

use crate::data::{PreprocessConfig, SynthConfig};
use crate::em::EmConfig;
use crate::error::{DrError, Result};
use crate::reranker::JointObjectiveWeights;
use crate::structure::StructureConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub preprocess: PreprocessConfig,
    pub validation_users: usize,
    pub test_users: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            validation_users: 1000,
            test_users: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Items returned per user.
    pub k: usize,
    /// Grow the beam until the candidate count reaches `multipliers[0]·k`;
    /// when unset, the structure's fixed beam is used.
    pub adaptive: Option<[f64; 2]>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            adaptive: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Name of the profile the file was layered on.
    #[serde(default)]
    pub profile: Option<String>,
    /// Root of every random stream in the run.
    #[serde(default)]
    pub seed: u64,
    pub structure: StructureConfig,
    #[serde(default)]
    pub training: EmConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

pub const PROFILES: [&str; 3] = ["movielens", "amazon", "synthetic"];

impl RunConfig {
    pub fn profile(name: &str) -> Result<Self> {
        let base = |structure: StructureConfig, k: usize| RunConfig {
            profile: Some(name.to_string()),
            seed: 0,
            structure,
            training: EmConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig { k, adaptive: None },
            synth: SynthConfig::default(),
        };
        match name {
            "movielens" => Ok(base(
                StructureConfig {
                    k: 50,
                    d: 3,
                    j: 3,
                    beam: 25,
                    alpha: 3e-5,
                    ..StructureConfig::default()
                },
                10,
            )),
            "amazon" => Ok(base(
                StructureConfig {
                    k: 100,
                    d: 3,
                    j: 3,
                    beam: 50,
                    alpha: 3e-7,
                    ..StructureConfig::default()
                },
                200,
            )),
            "synthetic" => {
                let mut cfg = base(
                    StructureConfig {
                        k: 16,
                        d: 2,
                        j: 2,
                        beam: 8,
                        score_capacity: 8,
                        alpha: 1e-6,
                        emb_dim: 32,
                        hidden: Some(vec![64]),
                        ..StructureConfig::default()
                    },
                    20,
                );
                cfg.data.validation_users = 0;
                cfg.training = EmConfig {
                    epochs: 4,
                    joint: JointObjectiveWeights {
                        freeze_epoch: 2,
                        ..Default::default()
                    },
                    ..EmConfig::default()
                };
                Ok(cfg)
            }
            other => Err(DrError::config(format!(
                "unknown profile {other:?}; expected one of {}",
                PROFILES.join(", ")
            ))),
        }
    }

    /// Parse TOML. A top-level `profile` key selects the base the remaining
    /// keys override; without one, the movielens profile is the base.
    pub fn from_toml(text: &str) -> Result<Self> {
        let overrides: toml::Table = text.parse().map_err(|e| DrError::Parse(format!("{e}")))?;
        let name = match overrides.get("profile") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(DrError::config("profile must be a string")),
            None => "movielens".to_string(),
        };
        let base = Self::profile(&name)?;
        let mut merged =
            toml::Table::try_from(&base).map_err(|e| DrError::config(format!("{e}")))?;
        merge(&mut merged, overrides);
        let cfg: RunConfig = merged
            .try_into()
            .map_err(|e| DrError::config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DrError::config(format!("{e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.structure.validate()?;
        self.training.validate()?;
        if self.eval.k == 0 {
            return Err(DrError::config("eval.k must be at least 1"));
        }
        if let Some([lo, hi]) = self.eval.adaptive {
            if !(lo > 0.0 && lo <= hi) {
                return Err(DrError::config("eval.adaptive must satisfy 0 < lo <= hi"));
            }
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
