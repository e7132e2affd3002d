use serde::{Deserialize, Serialize};

use super::{Network, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Default::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// SGD or Adam over every parameter of one network.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Scalar = f32> {
    config: OptimizerConfig,
    steps: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the accumulated gradients. A non-finite
    /// gradient aborts the update and leaves parameters untouched.
    pub fn step(&mut self, net: &mut Network<T>) -> Result<()> {
        let mut slots = net.param_slots();
        for (i, slot) in slots.iter().enumerate() {
            if let Some(j) = slot.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter tensor {i} at index {j}"
                )));
            }
        }
        let lr = T::from_f64(self.config.learning_rate);
        match self.config.kind {
            OptimizerKind::Sgd => {
                for slot in slots.iter_mut() {
                    for (p, &g) in slot.value.iter_mut().zip(slot.grad) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != slots.len() {
                    self.m = slots.iter().map(|s| vec![T::zero(); s.value.len()]).collect();
                    self.v = self.m.clone();
                }
                let t = (self.steps + 1) as i32;
                let b1 = self.config.beta1;
                let b2 = self.config.beta2;
                let c1 = T::from_f64(1.0 - b1.powi(t));
                let c2 = T::from_f64(1.0 - b2.powi(t));
                let (b1, b2) = (T::from_f64(b1), T::from_f64(b2));
                let one = T::one();
                let eps = T::from_f64(self.config.epsilon);
                for ((slot, m), v) in slots.iter_mut().zip(&mut self.m).zip(&mut self.v) {
                    for (((p, &g), m), v) in slot.value.iter_mut().zip(slot.grad).zip(m).zip(v) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let mh = *m / c1;
                        let vh = *v / c2;
                        *p -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Scales the gradients of all `nets` jointly so their global L2 norm is at
/// most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(nets: &mut [&mut Network<T>], max_norm: f64) -> f64 {
    let norm = nets
        .iter()
        .flat_map(|n| n.flat_grads())
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = T::from_f64(max_norm / norm);
        for n in nets.iter_mut() {
            n.scale_grads(scale);
        }
    }
    norm
}
