//! Deep Q-learning with experience replay, a periodically synchronized
//! target network and ε-greedy exploration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::INPUT_SHAPE;
use crate::env::{Env, Outcome};
use crate::error::{Error, Result};
use crate::log::{EpisodeTracker, TrainingLog};
use crate::nn::{argmax, clip_grad_norm, LayerSpec, Network, Optimizer, OptimizerConfig, OptimizerKind};
use crate::obs::Observation;
use crate::policy::{encode, encode_into};
use crate::reward::RewardBreakdown;
use crate::sim::MetaAction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub n_steps: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    pub target_sync_period: usize,
    pub warmup_steps: usize,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm cap; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            n_steps: 8000,
            learning_rate: 5e-4,
            gamma: 0.95,
            batch_size: 32,
            buffer_capacity: 15000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 6000,
            target_sync_period: 200,
            warmup_steps: 500,
            optimizer: OptimizerKind::Adam,
            max_grad_norm: 10.0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("dqn.{m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch_size must be positive and no larger than buffer_capacity");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon_start and epsilon_end must lie in [0, 1]");
        }
        if self.target_sync_period == 0 {
            return bad("target_sync_period must be positive");
        }
        if !(self.max_grad_norm >= 0.0) {
            return bad("max_grad_norm must be non-negative");
        }
        self.optimizer_config().validate()
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            ..Default::default()
        }
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`, then constant.
    pub fn epsilon(&self, step: usize) -> f64 {
        if step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: MetaAction,
    /// Final (shaped) reward.
    pub reward: f64,
    pub next_obs: Observation,
    /// Collision or arrival. Truncated steps still bootstrap.
    pub terminal: bool,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.items.get(slot)
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        self.sample_indices(n, rng)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

/// ε-greedy choice; the random draw happens first so exploration does not
/// require a forward pass.
pub fn select_action<R: Rng>(q_values: impl FnOnce() -> Result<Vec<f32>>, epsilon: f64, rng: &mut R) -> Result<MetaAction> {
    let explore = rng.random::<f64>() < epsilon;
    let index = if explore {
        rng.random_range(0..MetaAction::ALL.len())
    } else {
        argmax(&q_values()?)
    };
    Ok(MetaAction::from_index(index).expect("valid action index"))
}

/// `y = r` for terminal transitions, else `r + γ·max_a' q_next[a']`.
/// `next_q` holds three target-network values per transition.
pub fn bellman_targets(rewards: &[f64], terminals: &[bool], next_q: &[f32], gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(terminals)
        .zip(next_q.chunks_exact(3))
        .map(|((&r, &term), q)| {
            if term {
                r
            } else {
                let best = q.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                r + gamma * best
            }
        })
        .collect()
}

pub fn td_targets(batch: &[&Transition], target: &Network<f32>, gamma: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Shape("empty transition batch".into()));
    }
    let mut x = Vec::with_capacity(batch.len() * INPUT_SHAPE.iter().product::<usize>());
    for t in batch {
        encode_into(&t.next_obs, &mut x);
    }
    let next_q = target.predict(&x)?;
    let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let terminals: Vec<bool> = batch.iter().map(|t| t.terminal).collect();
    Ok(bellman_targets(&rewards, &terminals, &next_q, gamma))
}

/// One gradient step on the mean squared TD error of `batch`. Returns the
/// loss before the step.
pub fn dqn_update(
    online: &mut Network<f32>,
    target: &Network<f32>,
    opt: &mut Optimizer<f32>,
    batch: &[&Transition],
    gamma: f64,
    max_grad_norm: f64,
) -> Result<f64> {
    let y = td_targets(batch, target, gamma)?;
    let mut x = Vec::with_capacity(batch.len() * INPUT_SHAPE.iter().product::<usize>());
    for t in batch {
        encode_into(&t.obs, &mut x);
    }
    let q = online.forward(&x)?.to_vec();
    let n = batch.len() as f64;
    let mut grad = vec![0.0f32; q.len()];
    let mut loss = 0.0;
    for (j, (t, &yj)) in batch.iter().zip(&y).enumerate() {
        let k = j * 3 + t.action.index();
        let err = q[k] as f64 - yj;
        loss += err * err / n;
        grad[k] = (2.0 * err / n) as f32;
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite TD loss {loss}")));
    }
    online.zero_grad();
    online.backward_params(&grad)?;
    if max_grad_norm > 0.0 {
        clip_grad_norm(&mut [&mut *online], max_grad_norm);
    }
    opt.step(online)?;
    Ok(loss)
}

/// What happened during one trainer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub action: MetaAction,
    pub epsilon: f64,
    pub reward: RewardBreakdown,
    pub loss: Option<f64>,
    pub synced: bool,
    pub done: bool,
}

/// Seed for the traffic of training episode `episode`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    // SplitMix64 finalizer over a per-episode offset.
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(episode as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Step-at-a-time DQN learner.
pub struct DqnTrainer {
    cfg: DqnConfig,
    env: Env,
    online: Network<f32>,
    target: Network<f32>,
    opt: Optimizer<f32>,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    seed: u64,
    steps: usize,
    obs: Observation,
    tracker: EpisodeTracker,
    log: TrainingLog,
}

impl DqnTrainer {
    pub fn new(mut env: Env, specs: &[LayerSpec], cfg: DqnConfig, seed: u64) -> Result<DqnTrainer> {
        cfg.validate()?;
        let online = Network::<f32>::new(&INPUT_SHAPE, specs, seed)?;
        if online.output_len() != 3 {
            return Err(Error::Shape(format!(
                "Q-network must output 3 values, got {:?}",
                online.output_shape()
            )));
        }
        let target = online.clone();
        let obs = env.reset(episode_seed(seed, 0))?;
        Ok(DqnTrainer {
            opt: Optimizer::new(cfg.optimizer_config()),
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
            cfg,
            env,
            online,
            target,
            seed,
            steps: 0,
            obs,
            tracker: EpisodeTracker::default(),
            log: TrainingLog::new(false),
        })
    }

    pub fn online(&self) -> &Network<f32> {
        &self.online
    }

    pub fn target(&self) -> &Network<f32> {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let at = self.steps;
        self.step_inner().map_err(|e| e.at_step(at))
    }

    fn step_inner(&mut self) -> Result<StepReport> {
        let epsilon = self.cfg.epsilon(self.steps);
        let (online, obs) = (&self.online, &self.obs);
        let action = select_action(|| online.predict(&encode(obs)), epsilon, &mut self.rng)?;
        let out = self.env.step(action)?;
        let terminal = out.terminal();
        self.buffer.push(Transition {
            obs: std::mem::replace(&mut self.obs, out.obs.clone()),
            action,
            reward: out.reward.final_reward,
            next_obs: out.obs.clone(),
            terminal,
        });
        self.tracker
            .record_step(out.reward.final_reward, out.suggestion.map(|_| out.reward.matched));
        self.steps += 1;

        let mut loss = None;
        if self.steps > self.cfg.warmup_steps && self.buffer.len() >= self.cfg.batch_size {
            let batch = self.buffer.sample(self.cfg.batch_size, &mut self.rng);
            let l = dqn_update(
                &mut self.online,
                &self.target,
                &mut self.opt,
                &batch,
                self.cfg.gamma,
                self.cfg.max_grad_norm,
            )?;
            self.tracker.record_loss(l);
            loss = Some(l);
        }
        let synced = self.steps.is_multiple_of(self.cfg.target_sync_period);
        if synced {
            self.target.copy_params_from(&self.online)?;
        }

        let done = out.done();
        if done {
            let outcome = Outcome::of(&out.outcome).expect("done step has an outcome");
            let entry = self.tracker.finish(self.steps, outcome, Some(epsilon));
            self.log.episodes.push(entry);
            self.obs = self.env.reset(episode_seed(self.seed, self.tracker.episode))?;
        }
        Ok(StepReport {
            action,
            epsilon,
            reward: out.reward,
            loss,
            synced,
            done,
        })
    }

    /// Runs `n` more steps and returns the online network and the log.
    pub fn run(mut self, n: usize) -> Result<(Network<f32>, TrainingLog)> {
        for _ in 0..n {
            self.step()?;
        }
        Ok((self.online, self.log))
    }
}

pub fn train_dqn(env: Env, specs: &[LayerSpec], cfg: &DqnConfig, seed: u64) -> Result<(Network<f32>, TrainingLog)> {
    let steps = cfg.n_steps;
    DqnTrainer::new(env, specs, cfg.clone(), seed)?.run(steps)
}
