use serde::{Deserialize, Serialize};

/// Exponential warm-up: `max_lr · exp(−5·(1 − min(epoch/ramp, 1))²)`.
pub fn lr_schedule(epoch: usize, max_lr: f64, ramp_epochs: usize) -> f64 {
    let x = if ramp_epochs == 0 {
        1.0
    } else {
        (epoch as f64 / ramp_epochs as f64).min(1.0)
    };
    max_lr * (-5.0 * (1.0 - x).powi(2)).exp()
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed under the optimizer");
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i] as f64;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let update = lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            params[i] = (params[i] as f64 - update) as f32;
        }
    }
}
