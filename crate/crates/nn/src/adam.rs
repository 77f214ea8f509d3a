use serde::{Deserialize, Serialize};

use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Adaptive-moment gradient descent with bias correction.
///
/// Moment buffers are plain tensors so the full optimizer state can be
/// serialized next to the parameters it drives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.dims()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Overwrite the step counter, e.g. when restoring saved state.
    pub fn set_steps(&mut self, step: u64) {
        self.step = step;
    }

    /// First and second moment buffers, one per parameter.
    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn moments_mut(&mut self) -> (&mut [Tensor], &mut [Tensor]) {
        (&mut self.m, &mut self.v)
    }

    /// Apply one update. Parameters without a gradient are treated as having
    /// a zero gradient. With a zero learning rate the network is frozen:
    /// only the step counter advances.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamGrads) {
        self.step += 1;
        if self.lr == 0.0 {
            return;
        }
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let id = ParamId(i);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            match grads.get(id) {
                Some(g) => {
                    for ((mm, vv), &gg) in m.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                        *mm = self.beta1 * *mm + (1.0 - self.beta1) * gg;
                        *vv = self.beta2 * *vv + (1.0 - self.beta2) * gg * gg;
                    }
                }
                None => {
                    for (mm, vv) in m.data_mut().iter_mut().zip(v.data_mut()) {
                        *mm *= self.beta1;
                        *vv *= self.beta2;
                    }
                }
            }
            let p = params.get_mut(id);
            for ((pp, &mm), &vv) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let mhat = mm / bc1;
                let vhat = vv / bc2;
                *pp -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut ps = ParamStore::new();
        let id = ps.add("x", Tensor::full([1, 1, 1, 2], 3.0));
        let mut opt = Adam::new(&ps, 0.1);
        for _ in 0..500 {
            let mut g = ParamGrads::new(1);
            g.accumulate(id, &ps.get(id).scale(2.0));
            opt.step(&mut ps, &g);
        }
        assert!(ps.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn zero_learning_rate_leaves_params_bit_identical() {
        let mut ps = ParamStore::new();
        let id = ps.add("x", Tensor::full([1, 1, 1, 3], 0.123));
        let before = ps.clone();
        let mut opt = Adam::new(&ps, 0.0);
        let mut g = ParamGrads::new(1);
        g.accumulate(id, &Tensor::full([1, 1, 1, 3], 5.0));
        let moments_before = opt.clone();
        opt.step(&mut ps, &g);
        assert_eq!(ps, before);
        assert_eq!(opt.steps(), 1);
        assert_eq!(opt.moments(), moments_before.moments());
    }
}
