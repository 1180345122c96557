//! Adaptive-moment optimizer with optional decoupled weight decay.

use ndarray::{Array2, Zip};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) decay; 0 gives plain Adam.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            weight_decay,
            ..Self::adam(learning_rate)
        }
    }
}

/// Optimizer state for one parameter set. Fresh state per training run.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Array2<f64>]) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            second: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let update = (*m / bias1) / ((*v / bias2).sqrt() + c.eps);
                *p -= c.learning_rate * (update + c.weight_decay * *p);
            });
        }
    }
}
