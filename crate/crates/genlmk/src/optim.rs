//! Adaptive-moment optimizer and the linear learning-rate decay schedule.

use crate::autodiff::Tensor;
use crate::scalar::Scalar;
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Base rate for the first half of training, then linear decay to zero.
pub fn lr_at(base: f64, step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 || step < total_steps / 2 {
        return base;
    }
    let half = total_steps - total_steps / 2;
    let into = (step - total_steps / 2).min(half);
    base * (half - into) as f64 / half as f64
}

/// Adam over a fixed parameter list. Moment buffers are aligned with the
/// parameter order, which is the (stable) named-parameter order of the nets.
pub struct Adam<F: Scalar> {
    pub cfg: AdamConfig,
    params: Vec<Tensor<F>>,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(cfg: AdamConfig, params: Vec<Tensor<F>>) -> Self {
        let m = params.iter().map(|p| ArrayD::zeros(p.data().raw_dim())).collect();
        let v = params.iter().map(|p| ArrayD::zeros(p.data().raw_dim())).collect();
        Adam { cfg, params, m, v, t: 0 }
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// One update using the current gradients, at learning rate `lr`.
    /// Parameters without a gradient are skipped.
    pub fn step(&mut self, lr: f64) {
        self.t += 1;
        let b1 = F::from_f64(self.cfg.beta1);
        let b2 = F::from_f64(self.cfg.beta2);
        let eps = F::from_f64(self.cfg.eps);
        let lr = F::from_f64(lr);
        let one = F::one();
        let bc1 = one - b1.powi(self.t as i32);
        let bc2 = one - b2.powi(self.t as i32);
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = p.grad() else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut *m).and(&g).for_each(|m, &g| {
                *m = b1 * *m + (one - b1) * g;
            });
            ndarray::Zip::from(&mut *v).and(&g).for_each(|v, &g| {
                *v = b2 * *v + (one - b2) * g * g;
            });
            let mut data = p.data_mut();
            ndarray::Zip::from(&mut *data).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Optimizer state as named blobs for checkpointing, aligned with the
    /// names the parameter list was built from.
    pub fn state_blobs(&self, names: &[String]) -> Vec<(String, ArrayD<F>)> {
        assert_eq!(names.len(), self.params.len());
        let mut out = Vec::new();
        for (i, name) in names.iter().enumerate() {
            out.push((format!("{name}.adam_m"), self.m[i].clone()));
            out.push((format!("{name}.adam_v"), self.v[i].clone()));
        }
        out
    }

    pub fn restore_state(&mut self, names: &[String], blobs: &[(String, ArrayD<F>)], t: u64) {
        let lookup: std::collections::HashMap<&str, &ArrayD<F>> =
            blobs.iter().map(|(n, a)| (n.as_str(), a)).collect();
        for (i, name) in names.iter().enumerate() {
            if let Some(&m) = lookup.get(format!("{name}.adam_m").as_str()) {
                self.m[i] = m.clone();
            }
            if let Some(&v) = lookup.get(format!("{name}.adam_v").as_str()) {
                self.v[i] = v.clone();
            }
        }
        self.t = t;
    }
}
