//! Adam with bias correction, and patience-based early stopping.

use serde::{Deserialize, Serialize};

use crate::math::sqrt;
use crate::seqnet::{ModelDims, ParamGrads, Tensors};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    m: Tensors,
    v: Tensors,
    step: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, dims: &ModelDims) -> Self {
        Self {
            config,
            m: Tensors::zeros(dims),
            v: Tensors::zeros(dims),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut Tensors, grads: &ParamGrads) {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.step as f64);
        // bias correction folded into the step size and epsilon
        let step_size = learning_rate * sqrt(bc2) / bc1;
        let eps_hat = epsilon * sqrt(bc2);
        for (((p, g), m), v) in params
            .blocks_mut()
            .into_iter()
            .zip(grads.tensors.blocks())
            .zip(self.m.blocks_mut())
            .zip(self.v.blocks_mut())
        {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= step_size * *m / (sqrt(*v) + eps_hat);
            }
        }
    }
}

/// Tracks the best validation loss; stops after `patience` epochs without a
/// strict improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    /// Records an epoch's validation loss. Returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let dims = ModelDims {
            num_courses: 1,
            num_letters: 1,
            attr_width: 0,
            hidden: 1,
            race_classes: 1,
        };
        let mut p = Tensors::zeros(&dims);
        let mut g = ParamGrads::zeros(&dims);
        g.tensors.bias[0] = 3.0;
        g.tensors.bias[1] = -0.5;
        let mut adam = Adam::new(AdamConfig::default(), &dims);
        adam.update(&mut p, &g);
        assert!((p.bias[0] + 1e-3).abs() < 1e-9);
        assert!((p.bias[1] - 1e-3).abs() < 1e-9);
        assert_eq!(p.bias[2], 0.0);
    }

    #[test]
    fn early_stopping_patience() {
        let mut es = EarlyStopping::new(2);
        assert!(es.observe(0, 1.0));
        assert!(!es.observe(1, 1.0));
        assert!(!es.should_stop());
        assert!(!es.observe(2, 1.5));
        assert!(es.should_stop());
        assert_eq!(es.best(), Some((0, 1.0)));
    }
}
