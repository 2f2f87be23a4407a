use std::collections::BTreeMap;

use super::tensor::Tensor;
use super::{AutodiffError, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. First/second moments are keyed by parameter
/// name; the step counter must be strictly increasing across calls.
pub struct Adam {
    cfg: AdamConfig,
    slots: BTreeMap<String, Slot>,
    last_step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, slots: BTreeMap::new(), last_step: 0 }
    }

    pub fn last_step(&self) -> u64 {
        self.last_step
    }

    /// One update at explicit step `t` (`t > last_step` or the call is
    /// rejected; replaying a step would corrupt the bias correction).
    /// `updates` pairs each named parameter with its gradient and learning
    /// rate, so different parameter groups can run at different rates.
    pub fn step_at(
        &mut self,
        t: u64,
        updates: &mut [(&str, f64, &mut Tensor, &Tensor)],
    ) -> Result<()> {
        if t <= self.last_step {
            return Err(AutodiffError::Contract(format!(
                "adam step {} not greater than previous step {}",
                t, self.last_step
            )));
        }
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        for (name, lr, param, grad) in updates.iter_mut() {
            if param.shape() != grad.shape() {
                return Err(AutodiffError::Shape {
                    op: "adam",
                    msg: format!(
                        "{}: param {:?} vs grad {:?}",
                        name,
                        param.shape(),
                        grad.shape()
                    ),
                });
            }
            let n = param.len();
            let slot = self
                .slots
                .entry(name.to_string())
                .or_insert_with(|| Slot { m: vec![0.0; n], v: vec![0.0; n] });
            if slot.m.len() != n {
                return Err(AutodiffError::Shape {
                    op: "adam",
                    msg: format!("{}: state len {} vs param len {}", name, slot.m.len(), n),
                });
            }
            let p = param.data_mut();
            let g = grad.data();
            for i in 0..n {
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g[i];
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                p[i] -= *lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
        self.last_step = t;
        Ok(())
    }

    /// Convenience: next step in sequence.
    pub fn step(&mut self, updates: &mut [(&str, f64, &mut Tensor, &Tensor)]) -> Result<()> {
        self.step_at(self.last_step + 1, updates)
    }
}
