use crate::error::{FriError, Result};

use super::tensor::Tensor;

/// Adam with bias correction. Accumulators are allocated on the first step.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(FriError::DimensionMismatch(format!("{} params, {} grads", params.len(), grads.len())));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(FriError::DimensionMismatch("parameter count changed between steps".into()));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape != g.shape || p.len() != m.len() {
                return Err(FriError::DimensionMismatch(format!("param {:?} vs grad {:?}", p.shape, g.shape)));
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g.data[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p.data[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
