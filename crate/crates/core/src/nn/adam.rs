use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam, no weight decay.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    config: AdamConfig,
    step: u64,
    m: ParamStore<S>,
    v: ParamStore<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, params: &ParamStore<S>) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore<S>, grads: &ParamStore<S>) {
        self.step += 1;
        let c = self.config;
        let b1 = S::of(c.beta1);
        let b2 = S::of(c.beta2);
        let one = S::one();
        let bc1 = one - S::of(c.beta1.powi(self.step as i32));
        let bc2 = one - S::of(c.beta2.powi(self.step as i32));
        let lr = S::of(c.lr);
        let eps = S::of(c.eps);
        let entries = params
            .entries_mut()
            .iter_mut()
            .zip(grads.entries())
            .zip(self.m.entries_mut().iter_mut().zip(self.v.entries_mut()));
        for ((p, g), (m, v)) in entries {
            for (((p, &g), m), v) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
