use intersect_core::config::{ConvLayer, NetworkConfig, INPUT_SHAPE};
use intersect_core::dqn::{dqn_update, select_action, train_dqn, DqnConfig, DqnTrainer, ReplayBuffer, Transition};
use intersect_core::env::Outcome;
use intersect_core::nn::{Network, Optimizer, OptimizerConfig};
use intersect_core::{Env, MetaAction, Observation, RewardConfig, RewardModel, ScenarioConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_net() -> NetworkConfig {
    NetworkConfig {
        conv: vec![ConvLayer {
            out_channels: 2,
            kernel: 8,
            stride: 8,
        }],
        hidden: 16,
    }
}

fn env(vehicles: usize, model: RewardModel) -> Env {
    let s = ScenarioConfig {
        initial_vehicle_count: vehicles,
        ..ScenarioConfig::default()
    };
    Env::new(s, RewardConfig::default(), model).unwrap()
}

/// Consecutive observations of one episode.
fn observations(n: usize) -> Vec<Observation> {
    let mut e = env(3, RewardModel::None);
    let mut out = vec![e.reset(5).unwrap()];
    let mut episode = 5;
    while out.len() < n + 1 {
        let step = e.step(MetaAction::Faster).unwrap();
        if step.done() {
            episode += 1;
            out.push(e.reset(episode).unwrap());
        } else {
            out.push(step.obs);
        }
    }
    out
}

fn transition(obs: &Observation, next: &Observation, reward: f64, terminal: bool) -> Transition {
    Transition {
        obs: obs.clone(),
        action: MetaAction::Idle,
        reward,
        next_obs: next.clone(),
        terminal,
    }
}

#[test]
fn replay_is_fifo() {
    let o = observations(1);
    let mut b = ReplayBuffer::new(5);
    for i in 0..8 {
        b.push(transition(&o[0], &o[1], i as f64, false));
    }
    assert_eq!(b.len(), 5);
    let kept: Vec<f64> = b.iter().map(|t| t.reward).collect();
    assert_eq!(kept, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
}

#[test]
fn sampling_is_uniform_over_slots() {
    let o = observations(1);
    let slots = 20;
    let mut b = ReplayBuffer::new(slots);
    for i in 0..slots + 7 {
        b.push(transition(&o[0], &o[1], i as f64, false));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 200_000;
    let mut counts = vec![0usize; slots];
    for i in b.sample_indices(draws, &mut rng) {
        counts[i] += 1;
    }
    let p = 1.0 / slots as f64;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (slot, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() <= 3.0 * sigma, "slot {slot}: {c} vs {mean}");
    }
}

#[test]
fn full_exploration_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 10_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let a = select_action(|| panic!("ε = 1 must not query the network"), 1.0, &mut rng).unwrap();
        counts[a.index()] += 1;
    }
    let sigma = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 / 3.0).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn loss_falls_on_a_frozen_batch() {
    let o = observations(8);
    let rewards = [1.0, -5.0, 0.0, 2.0, 1.0, 0.0, 2.2, -1.0];
    let batch: Vec<Transition> = (0..8).map(|i| transition(&o[i], &o[i + 1], rewards[i], i % 3 == 0)).collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let specs = tiny_net().q_specs();
    let mut online = Network::<f32>::new(&INPUT_SHAPE, &specs, 1).unwrap();
    let target = online.clone();
    let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3));
    let first = dqn_update(&mut online, &target, &mut opt, &refs, 0.95, 0.0).unwrap();
    let mut last = first;
    for _ in 0..1500 {
        last = dqn_update(&mut online, &target, &mut opt, &refs, 0.95, 0.0).unwrap();
        if last < 1e-4 {
            break;
        }
    }
    assert!(last < 1e-3, "loss {first} -> {last}");
}

#[test]
fn target_matches_online_after_each_sync() {
    let cfg = DqnConfig {
        warmup_steps: 10,
        batch_size: 4,
        target_sync_period: 7,
        ..DqnConfig::default()
    };
    let mut t = DqnTrainer::new(env(1, RewardModel::Rule), &tiny_net().q_specs(), cfg, 2).unwrap();
    let mut syncs = 0;
    for _ in 0..40 {
        let r = t.step().unwrap();
        if r.synced {
            syncs += 1;
            assert_eq!(t.online().flat_params(), t.target().flat_params());
        } else if t.steps() > 11 && !t.steps().is_multiple_of(7) {
            assert_ne!(t.online().flat_params(), t.target().flat_params());
        }
    }
    assert!(syncs >= 4);
}

#[test]
fn shaping_leaves_early_trajectory_unchanged() {
    let cfg = DqnConfig {
        warmup_steps: 1000,
        ..DqnConfig::default()
    };
    let specs = tiny_net().q_specs();
    let mut plain = DqnTrainer::new(env(1, RewardModel::None), &specs, cfg.clone(), 4).unwrap();
    let mut shaped = DqnTrainer::new(env(1, RewardModel::Rule), &specs, cfg, 4).unwrap();
    // Before warmup ends nothing is learned, so only rewards may differ.
    for _ in 0..200 {
        let a = plain.step().unwrap();
        let b = shaped.step().unwrap();
        assert_eq!(a.action, b.action);
        assert_eq!(a.reward.basic, b.reward.basic);
        assert_eq!(a.done, b.done);
    }
}

#[test]
fn full_run_reaches_the_destination() {
    let net = NetworkConfig {
        conv: vec![ConvLayer {
            out_channels: 8,
            kernel: 8,
            stride: 8,
        }],
        hidden: 64,
    };
    let (_, log) = train_dqn(env(1, RewardModel::Rule), &net.q_specs(), &DqnConfig::default(), 0).unwrap();
    assert!(log.episodes.last().unwrap().step <= 8000);
    assert!(log.episodes.iter().any(|e| e.outcome == Outcome::Success));
}
