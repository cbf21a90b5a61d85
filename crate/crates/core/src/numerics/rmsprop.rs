use serde::{Deserialize, Serialize};

use super::params::ParameterStore;

/// RMSProp with PyTorch's default update:
///
/// ```text
/// v     <- alpha * v + (1 - alpha) * g^2
/// theta <- theta - lr * g / (sqrt(v) + eps)
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropState {
    pub learning_rate: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub steps: u64,
    square_avg: Vec<Vec<f64>>,
}

impl Default for RmsPropState {
    fn default() -> Self {
        Self::new(0.01)
    }
}

impl RmsPropState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            alpha: 0.99,
            epsilon: 1e-8,
            steps: 0,
            square_avg: Vec::new(),
        }
    }

    pub fn square_avg(&self) -> &[Vec<f64>] {
        &self.square_avg
    }

    /// Applies one update from the store's accumulated gradients, then
    /// zeroes them.
    pub fn step(&mut self, store: &mut ParameterStore) {
        let (params, grads) = store.split_mut();
        if self.square_avg.len() != params.len() {
            self.square_avg = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads.iter_mut()).zip(&mut self.square_avg) {
            for i in 0..p.value.len() {
                let gi = g[i];
                v[i] = self.alpha * v[i] + (1.0 - self.alpha) * gi * gi;
                p.value[i] -= self.learning_rate * gi / (v[i].sqrt() + self.epsilon);
            }
            g.fill(0.0);
        }
        self.steps += 1;
    }
}

/// Runs one RMSProp update on `params`.
pub fn rmsprop_step(state: &mut RmsPropState, params: &mut ParameterStore) {
    state.step(params);
}
