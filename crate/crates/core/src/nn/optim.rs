//! Adam and gradient-norm clipping.

use crate::real::Real;

use super::params::ParamStore;

/// Rescales all trainable gradients so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<F: Real>(store: &ParamStore<F>, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for p in store.trainable() {
        if let Some(g) = p.grad_ref().as_ref() {
            sq += g.iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = F::lit(max_norm / norm);
        for p in store.trainable() {
            p.accumulate_with(|g| g.iter_mut().for_each(|v| *v *= k));
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable tensor that holds a gradient.
    pub fn step<F: Real>(&mut self, store: &ParamStore<F>) {
        let params: Vec<_> = store.trainable().collect();
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer bound to another model");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad_ref();
            let Some(g) = grad.as_ref() else { continue };
            let mut data = p.data_mut();
            for i in 0..g.len() {
                let gi = g[i].as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                data[i] -= F::lit(update);
            }
        }
    }
}
