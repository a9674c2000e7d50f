use serde::{Deserialize, Serialize};

use crate::model::{Gradients, ModelParams};
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamWConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay. Decay is applied to every tensor.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ModelParams<T>) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|(_, _, xs)| vec![T::zero(); xs.len()])
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &Gradients<T>) {
        self.step += 1;
        let c = self.config;
        let lr = T::lit(c.learning_rate);
        let decay = T::one() - T::lit(c.learning_rate * c.weight_decay);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let correct1 = T::one() - T::lit(c.beta1.powi(self.step as i32));
        let correct2 = T::one() - T::lit(c.beta2.powi(self.step as i32));
        let eps = T::lit(c.epsilon);
        let grads = grads.tensors();
        let mut t = 0;
        params.for_each_mut(|_, theta| {
            let g = grads[t].2;
            let (m, v) = (&mut self.first[t], &mut self.second[t]);
            for i in 0..theta.len() {
                theta[i] *= decay;
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / correct1;
                let v_hat = v[i] / correct2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            t += 1;
        });
    }
}
