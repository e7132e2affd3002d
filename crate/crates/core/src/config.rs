//! Run configuration: one TOML document with `[env]`, `[reward]`,
//! `[network]`, `[dqn]`, `[ppo]` and `[run]` sections. Every key is optional
//! and unknown keys are rejected by name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dqn::DqnConfig;
use crate::error::{Error, Result};
use crate::nn::LayerSpec;
use crate::obs::{FRAME_HEIGHT, FRAME_WIDTH, STACK_SIZE};
use crate::ppo::PpoConfig;
use crate::reward::{EmbeddingAssets, RewardConfig, RewardModel};
use crate::sim::ScenarioConfig;

/// Per-sample network input: stacked frames as channels.
pub const INPUT_SHAPE: [usize; 3] = [STACK_SIZE, FRAME_HEIGHT, FRAME_WIDTH];
pub const N_ACTIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Convolutional trunk (each conv followed by ReLU) and hidden width of
/// the dense heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub conv: Vec<ConvLayer>,
    pub hidden: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            conv: vec![
                ConvLayer {
                    out_channels: 16,
                    kernel: 8,
                    stride: 4,
                },
                ConvLayer {
                    out_channels: 32,
                    kernel: 4,
                    stride: 2,
                },
            ],
            hidden: 256,
        }
    }
}

impl NetworkConfig {
    /// Convolutions with ReLUs, then a flatten.
    pub fn trunk_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        for c in &self.conv {
            specs.push(LayerSpec::Conv2d {
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
            });
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::Flatten);
        specs
    }

    /// Dense(hidden) → ReLU → Dense(out).
    pub fn head_specs(&self, out: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Dense {
                out_dim: self.hidden,
            },
            LayerSpec::Relu,
            LayerSpec::Dense { out_dim: out },
        ]
    }

    /// Full Q-network / policy-logit network.
    pub fn q_specs(&self) -> Vec<LayerSpec> {
        let mut specs = self.trunk_specs();
        specs.extend(self.head_specs(N_ACTIONS));
        specs
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("network.hidden must be positive".into()));
        }
        crate::nn::Network::<f32>::new(&INPUT_SHAPE, &self.q_specs(), 0)
            .map(|_| ())
            .map_err(|e| Error::Config(format!("network.conv does not fit the input: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    None,
    Rule,
    Embedding,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::None => "none",
            ModelKind::Rule => "rule",
            ModelKind::Embedding => "embedding",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub model: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assets: Option<PathBuf>,
    pub r_speed: f64,
    pub r_collision: f64,
    pub r_destination: f64,
    pub w_c: f64,
    pub efficient_speed_threshold: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        RewardSection::from_config(ModelKind::None, &RewardConfig::default())
    }
}

impl RewardSection {
    pub fn from_config(model: ModelKind, c: &RewardConfig) -> Self {
        RewardSection {
            model,
            assets: None,
            r_speed: c.r_speed,
            r_collision: c.r_collision,
            r_destination: c.r_destination,
            w_c: c.w_c,
            efficient_speed_threshold: c.efficient_speed_threshold,
        }
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            r_speed: self.r_speed,
            r_collision: self.r_collision,
            r_destination: self.r_destination,
            w_c: self.w_c,
            efficient_speed_threshold: self.efficient_speed_threshold,
        }
    }

    /// Loads the reward-model backend, reading assets when needed.
    pub fn load_model(&self) -> Result<RewardModel> {
        match self.model {
            ModelKind::None => Ok(RewardModel::None),
            ModelKind::Rule => Ok(RewardModel::Rule),
            ModelKind::Embedding => {
                let path = self.assets.as_ref().ok_or_else(|| {
                    Error::MissingAssets("reward.assets must be set when reward.model = \"embedding\"".into())
                })?;
                let assets = EmbeddingAssets::load(path)?;
                if assets.bank().is_empty() {
                    return Err(Error::MissingAssets(format!(
                        "{} has an empty frame bank",
                        path.display()
                    )));
                }
                Ok(RewardModel::Embedding(assets.into()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Dqn,
    Ppo,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dqn => "dqn",
            Algorithm::Ppo => "ppo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub algorithm: Algorithm,
    /// Overrides the algorithm's own step budget when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub eval_episodes: usize,
    /// Method name used in comparison tables.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            algorithm: Algorithm::Dqn,
            steps: None,
            seed: 0,
            out: PathBuf::from("runs/default"),
            eval_episodes: 100,
            label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: ScenarioConfig,
    pub reward: RewardSection,
    pub network: NetworkConfig,
    pub dqn: DqnConfig,
    pub ppo: PpoConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.reward.reward_config().validate()?;
        self.network.validate()?;
        self.dqn.validate()?;
        self.ppo.validate()?;
        if self.run.eval_episodes == 0 {
            return Err(Error::Config("run.eval_episodes must be at least 1".into()));
        }
        Ok(())
    }

    /// Step budget after applying `run.steps`.
    pub fn steps(&self) -> usize {
        self.run.steps.unwrap_or(match self.run.algorithm {
            Algorithm::Dqn => self.dqn.n_steps,
            Algorithm::Ppo => self.ppo.n_steps,
        })
    }

    /// Method name for comparison tables: an explicit label, or one derived
    /// from the algorithm and reward model.
    pub fn label(&self) -> String {
        if let Some(l) = &self.run.label {
            return l.clone();
        }
        let alg = self.run.algorithm.name();
        match self.reward.model {
            ModelKind::None => alg.to_string(),
            ModelKind::Rule => format!("rule-{alg}"),
            ModelKind::Embedding => format!("emb-{alg}"),
        }
    }
}
