use serde::{Deserialize, Serialize};

use super::Parameters;

/// `params − lr · grads`.
pub fn sgd_step(params: &Parameters, grads: &Parameters, lr: f64) -> Parameters {
    assert_eq!(params.len(), grads.len(), "gradient shape does not match parameters");
    let mut next = params.clone();
    next.flat_mut().iter_mut().zip(grads.as_flat()).for_each(|(p, g)| *p -= lr * g);
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }
}

/// Stateful optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, n: usize) -> Self {
        Optimizer { config, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) {
        match self.config {
            OptimizerConfig::Sgd { lr } => *params = sgd_step(params, grads, lr),
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                let p = params.flat_mut();
                for (i, &g) in grads.as_flat().iter().enumerate() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    p[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}
