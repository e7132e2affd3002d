//! Basic environment reward, reward-model suggestions, and the gated
//! composition that adds a weighted bonus only when the agent follows the
//! suggested action.

mod assets;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use assets::{EmbeddingAssets, BankEntry, MAGIC as EMB_MAGIC};

use crate::error::{Error, Result};
use crate::obs::{FeatureVec, Observation};
use crate::sim::{MetaAction, StepOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub r_speed: f64,
    pub r_collision: f64,
    pub r_destination: f64,
    pub w_c: f64,
    pub efficient_speed_threshold: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            r_speed: 1.0,
            r_collision: -5.0,
            r_destination: 2.0,
            w_c: 1.2,
            efficient_speed_threshold: 7.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.r_speed,
            self.r_collision,
            self.r_destination,
            self.w_c,
            self.efficient_speed_threshold,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("reward values must be finite".into()));
        }
        if !(self.r_collision < 0.0 && 0.0 < self.r_speed && self.r_speed <= self.r_destination) {
            return Err(Error::Config(format!(
                "rewards must satisfy r_collision < 0 < r_speed <= r_destination, got {}, {}, {}",
                self.r_collision, self.r_speed, self.r_destination
            )));
        }
        if self.w_c <= 0.0 {
            return Err(Error::Config(format!("w_c must be positive, got {}", self.w_c)));
        }
        Ok(())
    }

    /// Bounds every composed reward must lie in.
    pub fn final_bounds(&self) -> (f64, f64) {
        (self.r_collision - self.w_c, self.r_destination + self.w_c)
    }
}

/// Collision beats arrival beats efficient speed.
pub fn basic_reward(outcome: &StepOutcome, cfg: &RewardConfig) -> f64 {
    if outcome.collided {
        cfg.r_collision
    } else if outcome.arrived {
        cfg.r_destination
    } else if outcome.ego_speed >= cfg.efficient_speed_threshold {
        cfg.r_speed
    } else {
        0.0
    }
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardModelOutput {
    pub suggested: MetaAction,
    pub scores: [f64; 3],
}

impl RewardModelOutput {
    /// Picks the highest score; equal scores resolve toward Slower.
    pub fn from_scores(scores: [f64; 3]) -> RewardModelOutput {
        let suggested = MetaAction::from_index(crate::nn::argmax(&scores)).expect("three actions");
        RewardModelOutput { suggested, scores }
    }

    pub fn one_hot(action: MetaAction) -> RewardModelOutput {
        let mut scores = [0.0; 3];
        scores[action.index()] = 1.0;
        RewardModelOutput {
            suggested: action,
            scores,
        }
    }
}

/// Below this speed the time-to-conflict uses this floor instead.
pub const MIN_TTC_SPEED: f64 = 0.5;
/// Arrival-time gap under which the ego should yield.
pub const CONFLICT_WINDOW_S: f64 = 2.0;
/// Arrival-time gap under which the ego holds its speed.
pub const CAUTION_WINDOW_S: f64 = 3.0;

fn time_to_conflict(distance: f64, speed: f64) -> f64 {
    distance / speed.max(MIN_TTC_SPEED)
}

/// Hand-written stand-in for a vision-language reward model.
///
/// The ego yields when some vehicle reaches the conflict zone within
/// `CONFLICT_WINDOW_S` of the ego, holds speed when the nearest such gap is
/// under `CAUTION_WINDOW_S`, and otherwise speeds up. Once the ego is inside
/// or past the zone it is committed and always speeds up.
pub fn rule_oracle(features: &FeatureVec) -> RewardModelOutput {
    let d_ego = features.ego_distance_to_conflict();
    if d_ego <= 0.0 {
        return RewardModelOutput::one_hot(MetaAction::Faster);
    }
    let t_ego = time_to_conflict(d_ego, features.ego_speed());
    let margin = features
        .occupied()
        .map(|(d, v)| (time_to_conflict(d, v) - t_ego).abs())
        .fold(f64::INFINITY, f64::min);
    let action = if margin <= CONFLICT_WINDOW_S {
        MetaAction::Slower
    } else if margin <= CAUTION_WINDOW_S {
        MetaAction::Idle
    } else {
        MetaAction::Faster
    };
    RewardModelOutput::one_hot(action)
}

/// Nearest-fingerprint lookup into the frame bank, scored against the three
/// action text embeddings.
pub fn embedding_model(obs: &Observation, assets: &EmbeddingAssets) -> Result<RewardModelOutput> {
    let entry = assets.nearest(&obs.newest().fingerprint())?;
    let mut scores = [0.0; 3];
    for (s, text) in scores.iter_mut().zip(assets.text_embeddings()) {
        *s = cosine(&entry.embedding, text)?;
    }
    Ok(RewardModelOutput::from_scores(scores))
}

/// Which backend supplies suggestions during training and evaluation.
#[derive(Debug, Clone, Default)]
pub enum RewardModel {
    /// No shaping; the agent sees only the basic reward.
    #[default]
    None,
    Rule,
    Embedding(Arc<EmbeddingAssets>),
}

impl RewardModel {
    pub fn name(&self) -> &'static str {
        match self {
            RewardModel::None => "none",
            RewardModel::Rule => "rule",
            RewardModel::Embedding(_) => "embedding",
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, RewardModel::None)
    }

    pub fn query(&self, obs: &Observation) -> Result<Option<RewardModelOutput>> {
        match self {
            RewardModel::None => Ok(None),
            RewardModel::Rule => Ok(Some(rule_oracle(&obs.features))),
            RewardModel::Embedding(assets) => embedding_model(obs, assets).map(Some),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub basic: f64,
    pub shaping_score: f64,
    pub matched: bool,
    #[serde(rename = "final")]
    pub final_reward: f64,
}

impl RewardBreakdown {
    /// Breakdown for a step without a reward model.
    pub fn unshaped(basic: f64) -> RewardBreakdown {
        RewardBreakdown {
            basic,
            shaping_score: 0.0,
            matched: false,
            final_reward: basic,
        }
    }
}

pub fn compose(
    basic: f64,
    model_out: &RewardModelOutput,
    taken: MetaAction,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let matched = taken == model_out.suggested;
    let shaping_score = model_out.scores[model_out.suggested.index()];
    let final_reward = if matched {
        basic + cfg.w_c * shaping_score
    } else {
        basic
    };
    RewardBreakdown {
        basic,
        shaping_score,
        matched,
        final_reward,
    }
}
