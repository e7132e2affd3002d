//! Proximal policy optimization with a clipped surrogate, generalized
//! advantage estimation, and a value head sharing the convolutional trunk.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{NetworkConfig, INPUT_SHAPE, N_ACTIONS};
use crate::dqn::episode_seed;
use crate::env::{Env, Outcome};
use crate::error::{Error, Result};
use crate::log::{EpisodeTracker, PpoStats, TrainingLog};
use crate::nn::{
    clip_grad_norm, log_softmax_rows, softmax_rows, Network, Optimizer, OptimizerConfig,
    OptimizerKind,
};
use crate::obs::Observation;
use crate::policy::{encode, encode_into};
use crate::sim::MetaAction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub n_steps: usize,
    pub horizon: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_range: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub normalize_advantages: bool,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm cap; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            n_steps: 8000,
            horizon: 256,
            learning_rate: 5e-4,
            gamma: 0.99,
            lambda: 0.95,
            clip_range: 0.2,
            epochs: 10,
            minibatch_size: 64,
            vf_coef: 0.5,
            ent_coef: 0.0,
            normalize_advantages: true,
            optimizer: OptimizerKind::Adam,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo.{m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda must lie in (0, 1]");
        }
        if !(self.clip_range > 0.0 && self.clip_range < 1.0) {
            return bad("clip_range must lie in (0, 1)");
        }
        if self.horizon == 0 || self.minibatch_size == 0 || self.minibatch_size > self.horizon {
            return bad("minibatch_size must be positive and no larger than horizon");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.vf_coef >= 0.0 && self.ent_coef >= 0.0 && self.max_grad_norm >= 0.0) {
            return bad("vf_coef, ent_coef and max_grad_norm must be non-negative");
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
}

/// Advantages and returns by generalized advantage estimation.
///
/// `dones[t]` marks the last step of an episode; nothing is bootstrapped
/// across it. `last_value` is the value of the state after the final step
/// (ignored when that step is done).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Shape(format!(
            "gae inputs have lengths {}, {}, {}",
            n,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Zero mean, unit variance (unchanged when the variance vanishes).
pub fn normalize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x = (*x - mean) / (std + 1e-8);
    }
}

/// Per-sample clipped surrogate `min(r·Â, clip(r, 1−ε, 1+ε)·Â)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Shared trunk with separate policy and value heads.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoNets {
    pub trunk: Network<f32>,
    pub policy: Network<f32>,
    pub value: Network<f32>,
}

impl PpoNets {
    pub fn new(cfg: &NetworkConfig, seed: u64) -> Result<PpoNets> {
        let trunk = Network::new(&INPUT_SHAPE, &cfg.trunk_specs(), seed)?;
        let feat = [trunk.output_len()];
        let policy = Network::new(&feat, &cfg.head_specs(N_ACTIONS), seed.wrapping_add(1))?;
        let value = Network::new(&feat, &cfg.head_specs(1), seed.wrapping_add(2))?;
        Ok(PpoNets {
            trunk,
            policy,
            value,
        })
    }

    /// Trunk and policy head as one logit network.
    pub fn policy_network(&self) -> Network<f32> {
        self.trunk.stack(&self.policy).expect("heads built for this trunk")
    }

    /// Trunk and value head as one network.
    pub fn value_network(&self) -> Network<f32> {
        self.trunk.stack(&self.value).expect("heads built for this trunk")
    }

    /// Action probabilities and state value for one observation.
    pub fn evaluate(&self, obs: &Observation) -> Result<([f64; 3], f64)> {
        let feat = self.trunk.predict(&encode(obs))?;
        let logits = self.policy.predict(&feat)?;
        let v = self.value.predict(&feat)?[0] as f64;
        let logits: Vec<f64> = logits.iter().map(|&z| z as f64).collect();
        let p = softmax_rows(&logits, 3);
        Ok(([p[0], p[1], p[2]], v))
    }

    /// Full-batch gradient descent on the value loss alone; returns the loss
    /// before each pass.
    pub fn fit_values(
        &mut self,
        obs: &[Observation],
        returns: &[f64],
        passes: usize,
        learning_rate: f64,
    ) -> Result<Vec<f64>> {
        let mut x = Vec::new();
        for o in obs {
            encode_into(o, &mut x);
        }
        let mut opt_t = Optimizer::new(OptimizerConfig::sgd(learning_rate));
        let mut opt_v = Optimizer::new(OptimizerConfig::sgd(learning_rate));
        let n = returns.len() as f64;
        let mut losses = Vec::with_capacity(passes);
        for _ in 0..passes {
            let feat = self.trunk.forward(&x)?.to_vec();
            let v = self.value.forward(&feat)?.to_vec();
            let mut loss = 0.0;
            let mut g = vec![0.0f32; v.len()];
            for (i, (&vi, &ri)) in v.iter().zip(returns).enumerate() {
                let err = vi as f64 - ri;
                loss += err * err / n;
                g[i] = (2.0 * err / n) as f32;
            }
            losses.push(loss);
            self.trunk.zero_grad();
            self.value.zero_grad();
            let dfeat = self.value.backward(&g)?;
            self.trunk.backward_params(&dfeat)?;
            opt_t.step(&mut self.trunk)?;
            opt_v.step(&mut self.value)?;
        }
        Ok(losses)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub obs: Vec<Observation>,
    pub actions: Vec<MetaAction>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Final (shaped) rewards; truncated steps also carry `γ·V(next)`.
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value of the observation following the last step.
    pub last_value: f64,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Statistics of one update phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoUpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    /// Largest `|r − 1|` on the first minibatch of the first epoch.
    pub initial_ratio_deviation: f64,
    /// Largest distance outside `[1−ε, 1+ε]` of any ratio used in an active
    /// clipped branch.
    pub clipped_ratio_excursion: f64,
    /// Largest `|Σp − 1|` over all policy rows of the phase.
    pub softmax_deviation: f64,
}

/// Whole-run checks of the update mechanics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoDiagnostics {
    pub updates: usize,
    pub max_initial_ratio_deviation: f64,
    pub max_clipped_ratio_excursion: f64,
    pub max_softmax_deviation: f64,
    pub clip_fraction_range: (f64, f64),
}

pub struct PpoTrainer {
    cfg: PpoConfig,
    env: Env,
    nets: PpoNets,
    opts: [Optimizer<f32>; 3],
    rng: ChaCha8Rng,
    seed: u64,
    steps: usize,
    obs: Observation,
    tracker: EpisodeTracker,
    log: TrainingLog,
    last: Option<PpoUpdateStats>,
    diagnostics: PpoDiagnostics,
}

impl PpoTrainer {
    pub fn new(mut env: Env, net_cfg: &NetworkConfig, cfg: PpoConfig, seed: u64) -> Result<PpoTrainer> {
        cfg.validate()?;
        let nets = PpoNets::new(net_cfg, seed)?;
        let obs = env.reset(episode_seed(seed, 0))?;
        let oc = cfg.optimizer_config();
        Ok(PpoTrainer {
            opts: [Optimizer::new(oc), Optimizer::new(oc), Optimizer::new(oc)],
            rng: ChaCha8Rng::seed_from_u64(seed),
            cfg,
            env,
            nets,
            seed,
            steps: 0,
            obs,
            tracker: EpisodeTracker::default(),
            log: TrainingLog::new(true),
            last: None,
            diagnostics: PpoDiagnostics {
                clip_fraction_range: (f64::INFINITY, f64::NEG_INFINITY),
                ..Default::default()
            },
        })
    }

    pub fn nets(&self) -> &PpoNets {
        &self.nets
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn diagnostics(&self) -> &PpoDiagnostics {
        &self.diagnostics
    }

    fn sample(&mut self, p: &[f64; 3]) -> MetaAction {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return MetaAction::from_index(i).expect("three actions");
            }
        }
        // Rounding left a sliver above the cumulative sum.
        let last = p.iter().rposition(|&x| x > 0.0).unwrap_or(2);
        MetaAction::from_index(last).expect("three actions")
    }

    /// Collects `n` steps with the current stochastic policy.
    pub fn collect(&mut self, n: usize) -> Result<RolloutBuffer> {
        let mut buf = RolloutBuffer::default();
        for _ in 0..n {
            let at = self.steps;
            self.collect_one(&mut buf).map_err(|e| e.at_step(at))?;
        }
        buf.last_value = if buf.dones.last().copied().unwrap_or(true) {
            0.0
        } else {
            self.nets.evaluate(&self.obs)?.1
        };
        Ok(buf)
    }

    fn collect_one(&mut self, buf: &mut RolloutBuffer) -> Result<()> {
        let (p, v) = self.nets.evaluate(&self.obs)?;
        let dev = (p.iter().sum::<f64>() - 1.0).abs();
        self.diagnostics.max_softmax_deviation = self.diagnostics.max_softmax_deviation.max(dev);
        let action = self.sample(&p);
        let out = self.env.step(action)?;
        let mut reward = out.reward.final_reward;
        if out.outcome.truncated {
            reward += self.cfg.gamma * self.nets.evaluate(&out.obs)?.1;
        }
        buf.obs.push(std::mem::replace(&mut self.obs, out.obs.clone()));
        buf.actions.push(action);
        buf.log_probs.push(p[action.index()].max(f64::MIN_POSITIVE).ln());
        buf.values.push(v);
        buf.rewards.push(reward);
        buf.dones.push(out.done());
        self.tracker
            .record_step(out.reward.final_reward, out.suggestion.map(|_| out.reward.matched));
        self.steps += 1;
        if out.done() {
            let outcome = Outcome::of(&out.outcome).expect("done step has an outcome");
            let mut entry = self.tracker.finish(self.steps, outcome, None);
            if let Some(s) = self.last {
                entry.loss = Some(s.policy_loss + self.cfg.vf_coef * s.value_loss);
                entry.clip_fraction = Some(s.clip_fraction);
                entry.policy_loss = Some(s.policy_loss);
                entry.value_loss = Some(s.value_loss);
            }
            self.log.episodes.push(entry);
            self.obs = self.env.reset(episode_seed(self.seed, self.tracker.episode))?;
        }
        Ok(())
    }

    /// Runs the clipped-surrogate update over a collected rollout.
    pub fn update(&mut self, buf: &RolloutBuffer) -> Result<PpoUpdateStats> {
        let at = self.steps;
        self.update_inner(buf).map_err(|e| e.at_step(at))
    }

    fn update_inner(&mut self, buf: &RolloutBuffer) -> Result<PpoUpdateStats> {
        let n = buf.len();
        if n == 0 {
            return Err(Error::Protocol("update on an empty rollout".into()));
        }
        let (mut adv, returns) = gae(
            &buf.rewards,
            &buf.values,
            &buf.dones,
            buf.last_value,
            self.cfg.gamma,
            self.cfg.lambda,
        )?;
        if self.cfg.normalize_advantages {
            normalize(&mut adv);
        }
        let clip = self.cfg.clip_range;
        let mb = self.cfg.minibatch_size.min(n);
        let mut stats = PpoUpdateStats {
            initial_ratio_deviation: f64::NAN,
            ..Default::default()
        };
        let mut count = 0usize;
        let mut clipped = 0usize;
        let mut minibatches = 0usize;
        let mut order: Vec<usize> = (0..n).collect();
        let mut x = Vec::new();
        for _epoch in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for idx in order.chunks(mb) {
                x.clear();
                for &i in idx {
                    encode_into(&buf.obs[i], &mut x);
                }
                let b = idx.len() as f64;
                let feat = self.nets.trunk.forward(&x)?.to_vec();
                let logits: Vec<f64> = self.nets.policy.forward(&feat)?.iter().map(|&z| z as f64).collect();
                let values = self.nets.value.forward(&feat)?.to_vec();
                let logp = log_softmax_rows(&logits, 3);
                let probs = softmax_rows(&logits, 3);

                let mut g_logits = vec![0.0f32; logits.len()];
                let mut g_values = vec![0.0f32; values.len()];
                let mut policy_loss = 0.0;
                let mut value_loss = 0.0;
                let mut entropy = 0.0;
                let mut first_dev: f64 = 0.0;
                for (k, &i) in idx.iter().enumerate() {
                    let row = &probs[k * 3..k * 3 + 3];
                    let lrow = &logp[k * 3..k * 3 + 3];
                    stats.softmax_deviation = stats
                        .softmax_deviation
                        .max((row.iter().sum::<f64>() - 1.0).abs());
                    let a = buf.actions[i].index();
                    let ratio = (lrow[a] - buf.log_probs[i]).exp();
                    first_dev = first_dev.max((ratio - 1.0).abs());
                    let used = ratio.clamp(1.0 - clip, 1.0 + clip);
                    let unclipped = ratio * adv[i];
                    let clipped_obj = used * adv[i];
                    if (ratio - 1.0).abs() > clip {
                        clipped += 1;
                    }
                    stats.mean_ratio += ratio;
                    count += 1;
                    // Gradient flows only through the unclipped branch.
                    let d_logp = if unclipped <= clipped_obj {
                        -ratio * adv[i] / b
                    } else {
                        // Ratio implied by the objective actually taken.
                        let effective = clipped_obj / adv[i];
                        let excursion = (effective - (1.0 + clip)).max((1.0 - clip) - effective).max(0.0);
                        stats.clipped_ratio_excursion = stats.clipped_ratio_excursion.max(excursion);
                        0.0
                    };
                    policy_loss -= unclipped.min(clipped_obj) / b;
                    let h: f64 = -row.iter().zip(lrow).map(|(p, l)| p * l).sum::<f64>();
                    entropy += h / b;
                    for j in 0..3 {
                        let onehot = if j == a { 1.0 } else { 0.0 };
                        let mut g = d_logp * (onehot - row[j]);
                        // d(−c·H)/dz_j = c·p_j·(log p_j + H)
                        g += self.cfg.ent_coef / b * row[j] * (lrow[j] + h);
                        g_logits[k * 3 + j] = g as f32;
                    }
                    let err = values[k] as f64 - returns[i];
                    value_loss += err * err / b;
                    g_values[k] = (self.cfg.vf_coef * 2.0 * err / b) as f32;
                }
                if minibatches == 0 {
                    stats.initial_ratio_deviation = first_dev;
                }
                let total = policy_loss + self.cfg.vf_coef * value_loss - self.cfg.ent_coef * entropy;
                if !total.is_finite() {
                    return Err(Error::Numeric(format!("non-finite PPO loss {total}")));
                }
                let nets = &mut self.nets;
                nets.trunk.zero_grad();
                nets.policy.zero_grad();
                nets.value.zero_grad();
                let mut dfeat = nets.policy.backward(&g_logits)?;
                let dv = nets.value.backward(&g_values)?;
                for (a, b) in dfeat.iter_mut().zip(dv) {
                    *a += b;
                }
                nets.trunk.backward_params(&dfeat)?;
                if self.cfg.max_grad_norm > 0.0 {
                    clip_grad_norm(
                        &mut [&mut nets.trunk, &mut nets.policy, &mut nets.value],
                        self.cfg.max_grad_norm,
                    );
                }
                self.opts[0].step(&mut nets.trunk)?;
                self.opts[1].step(&mut nets.policy)?;
                self.opts[2].step(&mut nets.value)?;
                stats.policy_loss += policy_loss;
                stats.value_loss += value_loss;
                stats.entropy += entropy;
                minibatches += 1;
            }
        }
        let m = minibatches as f64;
        stats.policy_loss /= m;
        stats.value_loss /= m;
        stats.entropy /= m;
        stats.mean_ratio /= count as f64;
        stats.clip_fraction = clipped as f64 / count as f64;

        let d = &mut self.diagnostics;
        d.updates += 1;
        d.max_initial_ratio_deviation = d.max_initial_ratio_deviation.max(stats.initial_ratio_deviation);
        d.max_clipped_ratio_excursion = d.max_clipped_ratio_excursion.max(stats.clipped_ratio_excursion);
        d.max_softmax_deviation = d.max_softmax_deviation.max(stats.softmax_deviation);
        d.clip_fraction_range = (
            d.clip_fraction_range.0.min(stats.clip_fraction),
            d.clip_fraction_range.1.max(stats.clip_fraction),
        );
        self.last = Some(stats);
        Ok(stats)
    }

    /// Alternates rollouts and updates until `n` steps are consumed.
    pub fn run(mut self, n: usize) -> Result<(PpoNets, TrainingLog, PpoDiagnostics)> {
        let end = self.steps + n;
        while self.steps < end {
            let chunk = self.cfg.horizon.min(end - self.steps);
            let buf = self.collect(chunk)?;
            self.update(&buf)?;
        }
        Ok((self.nets, self.log, self.diagnostics))
    }
}

impl From<PpoUpdateStats> for PpoStats {
    fn from(s: PpoUpdateStats) -> Self {
        PpoStats {
            clip_fraction: s.clip_fraction,
            policy_loss: s.policy_loss,
            value_loss: s.value_loss,
        }
    }
}

pub fn train_ppo(
    env: Env,
    net_cfg: &NetworkConfig,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<(PpoNets, TrainingLog, PpoDiagnostics)> {
    let steps = cfg.n_steps;
    PpoTrainer::new(env, net_cfg, cfg.clone(), seed)?.run(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_terminal() {
        let (a, r) = gae(&[1.0], &[0.0], &[true], 5.0, 0.99, 0.95).unwrap();
        assert_eq!(a, vec![1.0]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn lambda_zero_is_td_residual() {
        let r = [1.0, 0.5, -0.2];
        let v = [0.3, 0.1, 0.7];
        let (a, _) = gae(&r, &v, &[false, false, false], 0.4, 0.9, 0.0).unwrap();
        let want = [1.0 + 0.9 * 0.1 - 0.3, 0.5 + 0.9 * 0.7 - 0.1, -0.2 + 0.9 * 0.4 - 0.7];
        for (x, y) in a.iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(gae(&[1.0], &[], &[true], 0.0, 0.9, 0.9), Err(Error::Shape(_))));
    }

    #[test]
    fn surrogate_arithmetic() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_zero_mean_unit_variance() {
        let mut x = vec![1.0, 2.0, 3.0, 4.0];
        normalize(&mut x);
        let mean: f64 = x.iter().sum::<f64>() / 4.0;
        let var: f64 = x.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
