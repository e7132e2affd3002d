//! Fixtures shared by the criterion benchmarks.

use intersect_core::config::{ConvLayer, NetworkConfig, INPUT_SHAPE};
use intersect_core::env::Env;
use intersect_core::nn::Network;
use intersect_core::{MetaAction, Observation, RewardConfig, RewardModel, ScenarioConfig};

/// The small Q-network used for desk-scale training runs.
pub fn compact_network() -> NetworkConfig {
    NetworkConfig {
        conv: vec![ConvLayer {
            out_channels: 8,
            kernel: 8,
            stride: 8,
        }],
        hidden: 64,
    }
}

pub fn q_network(cfg: &NetworkConfig) -> Network<f32> {
    Network::new(&INPUT_SHAPE, &cfg.q_specs(), 0).expect("valid architecture")
}

pub fn busy_env(vehicles: usize) -> Env {
    let scenario = ScenarioConfig {
        initial_vehicle_count: vehicles,
        ..ScenarioConfig::default()
    };
    Env::new(scenario, RewardConfig::default(), RewardModel::Rule).expect("valid scenario")
}

/// An observation a few steps into an episode, so the stack holds motion.
pub fn sample_observation() -> Observation {
    let mut env = busy_env(6);
    let mut obs = env.reset(7).expect("reset");
    for _ in 0..3 {
        let step = env.step(MetaAction::Idle).expect("step");
        if step.done() {
            break;
        }
        obs = step.obs;
    }
    obs
}
