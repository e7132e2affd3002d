//! Episode driver tying the simulator, observation pipeline and reward
//! shaping together.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obs::Observation;
use crate::reward::{
    basic_reward, compose, RewardBreakdown, RewardConfig, RewardModel, RewardModelOutput,
};
use crate::sim::{self, MetaAction, ScenarioConfig, SimState, StepOutcome};

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

impl Outcome {
    pub fn of(step: &StepOutcome) -> Option<Outcome> {
        if step.collided {
            Some(Outcome::Collision)
        } else if step.arrived {
            Some(Outcome::Success)
        } else if step.truncated {
            Some(Outcome::Timeout)
        } else {
            None
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
        }
    }
}

/// Everything produced by one decision step.
#[derive(Debug, Clone)]
pub struct EnvStep {
    pub obs: Observation,
    pub outcome: StepOutcome,
    pub reward: RewardBreakdown,
    /// Reward-model output for the observation the action was chosen on.
    pub suggestion: Option<RewardModelOutput>,
}

impl EnvStep {
    /// Collision or arrival; truncation is not a true terminal state.
    pub fn terminal(&self) -> bool {
        self.outcome.collided || self.outcome.arrived
    }

    pub fn done(&self) -> bool {
        self.outcome.is_terminal()
    }
}

#[derive(Debug, Clone)]
pub struct Env {
    scenario: ScenarioConfig,
    reward: RewardConfig,
    model: RewardModel,
    state: Option<(SimState, Observation)>,
}

impl Env {
    pub fn new(scenario: ScenarioConfig, reward: RewardConfig, model: RewardModel) -> Result<Env> {
        scenario.validate()?;
        reward.validate()?;
        Ok(Env {
            scenario,
            reward,
            model,
            state: None,
        })
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn model(&self) -> &RewardModel {
        &self.model
    }

    /// Starts a new episode whose traffic is drawn from `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let config = ScenarioConfig {
            seed,
            ..self.scenario.clone()
        };
        let (state, obs) = sim::reset(&config)?;
        self.state = Some((state, obs.clone()));
        Ok(obs)
    }

    pub fn state(&self) -> Option<&SimState> {
        self.state.as_ref().map(|(s, _)| s)
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.state.as_ref().map(|(_, o)| o)
    }

    /// Reward-model output for the current observation.
    pub fn suggest(&self) -> Result<Option<RewardModelOutput>> {
        let (_, obs) = self
            .state
            .as_ref()
            .ok_or_else(|| Error::Protocol("suggest called before reset".into()))?;
        self.model.query(obs)
    }

    pub fn step(&mut self, action: MetaAction) -> Result<EnvStep> {
        let suggestion = self.suggest()?;
        let (state, obs) = self.state.as_mut().expect("checked by suggest");
        let outcome = state.step(action)?;
        let next = obs.advance(state);
        *obs = next.clone();
        let basic = basic_reward(&outcome, &self.reward);
        let reward = match &suggestion {
            Some(s) => compose(basic, s, action, &self.reward),
            None => RewardBreakdown::unshaped(basic),
        };
        Ok(EnvStep {
            obs: next,
            outcome,
            reward,
            suggestion,
        })
    }
}
