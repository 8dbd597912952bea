use serde::{Deserialize, Serialize};

use crate::param::Param;

/// Stochastic gradient descent with heavy-ball momentum and decoupled-from-bias
/// L2 weight decay (applied to every trainable tensor with more than one axis).
#[derive(Clone, Debug)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Vec<f32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Sgd {
            config,
            velocity: Vec::new(),
        }
    }

    /// One update at learning rate `lr`; `params` must be passed in the same
    /// order on every call.
    pub fn step(&mut self, params: Vec<&mut Param>, lr: f32) {
        let trainable: Vec<&mut Param> = params.into_iter().filter(|p| p.trainable).collect();
        if self.velocity.len() != trainable.len() {
            self.velocity = trainable.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        let SgdConfig {
            momentum,
            weight_decay,
            ..
        } = self.config;
        for (p, v) in trainable.into_iter().zip(&mut self.velocity) {
            p.ensure_grad();
            let decay = if p.shape.len() > 1 { weight_decay } else { 0.0 };
            for ((w, g), vel) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                let grad = g + decay * *w;
                *vel = momentum * *vel + grad;
                *w -= lr * *vel;
            }
        }
    }
}

/// Half-cosine decay from `base` to zero over `total` steps.
pub fn cosine_lr(base: f32, step: usize, total: usize) -> f32 {
    if total == 0 {
        return base;
    }
    let t = (step.min(total)) as f32 / total as f32;
    base * 0.5 * (1.0 + (std::f32::consts::PI * t).cos())
}
