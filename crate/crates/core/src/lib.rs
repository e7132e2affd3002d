//! Train and evaluate a driving agent at an unsignalized four-way intersection.
//!
//! The crate bundles a deterministic intersection simulator, a top-down
//! grayscale observation pipeline, a small neural-network engine, DQN and PPO
//! learners, and a reward-shaping layer that grants a bonus whenever the agent
//! agrees with the action suggested by a pluggable reward model.

pub mod config;
pub mod dqn;
pub mod env;
pub mod error;
pub mod eval;
pub mod io;
pub mod log;
pub mod nn;
pub mod obs;
pub mod plot;
pub mod policy;
pub mod ppo;
pub mod reward;
pub mod sim;

pub use env::Env;
pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, EvalReport};
pub use obs::{FeatureVec, Frame, Observation};
pub use reward::{RewardBreakdown, RewardConfig, RewardModel, RewardModelOutput};
pub use sim::{MetaAction, ScenarioConfig, SimState, StepOutcome};
