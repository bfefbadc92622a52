use log::warn;

use crate::autodiff::{ParameterStore, Tensor};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Moments sized for `store`, with betas (0.9, 0.999) and epsilon 1e-8.
    pub fn new(store: &ParameterStore, lr: f64) -> Self {
        Self::with_betas(store, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(
        store: &ParameterStore,
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        let m: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros_like(&p.value)).collect();
        Self {
            step: 0,
            lr,
            beta1,
            beta2,
            epsilon,
            v: m.clone(),
            m,
        }
    }

    pub fn first_moment(&self, index: usize) -> &Tensor {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor {
        &self.v[index]
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    ///
    /// Does nothing (and logs a warning) when no backward pass has run since
    /// the previous step.
    pub fn step(&mut self, store: &mut ParameterStore) {
        if !store.has_grads() {
            warn!("adam step requested before any backward pass; skipping");
            return;
        }
        assert_eq!(self.m.len(), store.len(), "optimizer built for a different store");
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store
            .params_mut()
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let values = p.value.data_mut();
            let grads = p.grad.data();
            for (((x, g), m), v) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        store.zero_grads();
    }
}
