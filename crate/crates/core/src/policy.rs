//! Action-selection policies used by evaluation and by scripted baselines.

use crate::config::INPUT_SHAPE;
use crate::error::{Error, Result};
use crate::nn::{argmax, Network};
use crate::obs::Observation;
use crate::reward::{rule_oracle, RewardModelOutput};
use crate::sim::MetaAction;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: MetaAction,
    /// Network outputs behind the choice (Q-values or logits).
    pub values: Option<[f64; 3]>,
}

pub trait Policy {
    fn act(&mut self, obs: &Observation, suggestion: Option<&RewardModelOutput>) -> Result<Decision>;
}

/// Flattened `(4, 64, 128)` input for one observation.
pub fn encode(obs: &Observation) -> Vec<f32> {
    let mut x = vec![0.0; INPUT_SHAPE.iter().product()];
    obs.write_input(&mut x);
    x
}

/// Appends one observation's input to a batch buffer.
pub(crate) fn encode_into(obs: &Observation, batch: &mut Vec<f32>) {
    obs.extend_input(batch);
}

pub(crate) fn three(values: &[f32]) -> [f64; 3] {
    [values[0] as f64, values[1] as f64, values[2] as f64]
}

/// Argmax over a network's three outputs, lowest index on ties.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    net: Network<f32>,
}

impl GreedyPolicy {
    pub fn new(net: Network<f32>) -> Result<GreedyPolicy> {
        if net.input_shape() != INPUT_SHAPE || net.output_len() != 3 {
            return Err(Error::Shape(format!(
                "policy network maps {:?} to {:?}, expected {:?} to [3]",
                net.input_shape(),
                net.output_shape(),
                INPUT_SHAPE
            )));
        }
        Ok(GreedyPolicy { net })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }
}

impl Policy for GreedyPolicy {
    fn act(&mut self, obs: &Observation, _: Option<&RewardModelOutput>) -> Result<Decision> {
        let out = self.net.predict(&encode(obs))?;
        let action = MetaAction::from_index(argmax(&out)).expect("three outputs");
        Ok(Decision {
            action,
            values: Some(three(&out)),
        })
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub MetaAction);

impl Policy for ConstantPolicy {
    fn act(&mut self, _: &Observation, _: Option<&RewardModelOutput>) -> Result<Decision> {
        Ok(Decision {
            action: self.0,
            values: None,
        })
    }
}

/// Takes whatever the reward model suggests, falling back to the rule
/// oracle when no suggestion is available.
#[derive(Debug, Clone, Copy, Default)]
pub struct ObeyPolicy;

impl Policy for ObeyPolicy {
    fn act(&mut self, obs: &Observation, suggestion: Option<&RewardModelOutput>) -> Result<Decision> {
        let s = suggestion.copied().unwrap_or_else(|| rule_oracle(&obs.features));
        Ok(Decision {
            action: s.suggested,
            values: Some(s.scores),
        })
    }
}

/// Plays a fixed action sequence, then repeats the last action.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    actions: Vec<MetaAction>,
    at: usize,
}

impl ScriptedPolicy {
    pub fn new(actions: Vec<MetaAction>) -> Self {
        assert!(!actions.is_empty(), "script needs at least one action");
        ScriptedPolicy { actions, at: 0 }
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, _: &Observation, _: Option<&RewardModelOutput>) -> Result<Decision> {
        let action = self.actions[self.at.min(self.actions.len() - 1)];
        self.at += 1;
        Ok(Decision {
            action,
            values: None,
        })
    }
}
