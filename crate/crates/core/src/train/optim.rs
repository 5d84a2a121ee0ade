//! Adam optimizer.

use crate::params::{GradStore, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(params: &ParamStore<f32>, lr: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One bias-corrected update.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &GradStore<f32>) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let lr = self.lr as f32;
        let (c1, c2, eps) = (c1 as f32, c2 as f32, self.eps as f32);
        for i in 0..grads.len() {
            let g = grads.get(i).data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.by_index_mut(i).data_mut();
            for k in 0..g.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::new(&[1, 2], vec![1.0f32, -1.0]).unwrap());
        let mut grads = GradStore::zeros_like(&params);
        let mut raw = ParamStore::new();
        raw.insert("w", Tensor::new(&[1, 2], vec![0.5f32, -2.0]).unwrap());
        grads.accumulate(&GradStore::from_store(raw));
        let mut opt = Adam::new(&params, 0.1);
        opt.step(&mut params, &grads);
        let w = params.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
    }
}
