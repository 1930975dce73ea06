//! Adam optimizer with optional global-norm gradient clipping.

use alloc::vec::Vec;

use crate::fmath;
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: params.iter().map(|(_, e)| Tensor::zeros(e.value.dims())).collect(),
            v: params.iter().map(|(_, e)| Tensor::zeros(e.value.dims())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn state(&self) -> (u64, &[Tensor], &[Tensor]) {
        (self.step_count, &self.m, &self.v)
    }

    /// Restores serialized state; shapes must match the parameter set.
    pub fn restore(&mut self, step_count: u64, m: Vec<Tensor>, v: Vec<Tensor>) {
        assert_eq!(m.len(), self.m.len(), "optimizer state length mismatch");
        assert_eq!(v.len(), self.v.len(), "optimizer state length mismatch");
        for (a, b) in m.iter().zip(&self.m) {
            assert_eq!(a.dims(), b.dims(), "optimizer moment shape mismatch");
        }
        self.step_count = step_count;
        self.m = m;
        self.v = v;
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - fmath::powi(self.beta1, t);
        let bc2 = 1.0 - fmath::powi(self.beta2, t);
        for (idx, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = grads[idx].data();
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.learning_rate * m_hat / (fmath::sqrt(v_hat) + self.epsilon);
            }
        }
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let total: f64 = grads.iter().map(|g| g.sq_norm()).sum();
    let norm = fmath::sqrt(total);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
    }
    norm
}
