//! Adam with bias-corrected moments over a flat list of named tensors.

use serde::{Deserialize, Serialize};

/// Optimizer state: one `(m, v)` moment pair per parameter tensor, in the
/// order the owning network visits its tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one Adam update to every `(params, grads)` tensor pair the
    /// visitor yields, then clears the grads.
    ///
    /// Moment buffers are allocated lazily on the first step and must be
    /// visited in the same order every step.
    pub fn step<'a, I>(&mut self, tensors: I)
    where
        I: Iterator<Item = (&'a mut [f64], &'a mut [f64])>,
    {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, (params, grads)) in tensors.enumerate() {
            if self.moments.len() == idx {
                self.moments
                    .push((vec![0.0; params.len()], vec![0.0; params.len()]));
            }
            let (m, v) = &mut self.moments[idx];
            assert_eq!(m.len(), params.len(), "adam_step: tensor shape changed");
            for k in 0..params.len() {
                let g = grads[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / b1t;
                let v_hat = v[k] / b2t;
                params[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                grads[k] = 0.0;
            }
        }
    }
}
