//! Adam with per-real-component moments.

use qgan_quat::{Scalar, Tensor};

use crate::autodiff::Gradients;
use crate::error::shape_err;
use crate::params::ParamStore;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for every parameter of one store, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update from tape gradients; parameters absent from `grads`
    /// receive a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        let g: Vec<Tensor<T>> = store.ids().map(|id| grads.param_or_zeros(store, id)).collect();
        self.step_with(store, &g)
    }

    /// One update from explicit per-parameter gradients in store order.
    pub fn step_with(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(shape_err(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moment slots",
                    store.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (i, id) in store.ids().enumerate() {
            let p = store.get(id);
            if grads[i].shape() != p.shape() || self.m[i].shape() != p.shape() {
                return Err(shape_err(
                    "adam_step",
                    format!("param {:?} vs grad {:?}", p.shape(), grads[i].shape()),
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let bc1 = T::from_f64(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let w = store.get_mut(id).data_mut();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, &g) in grads[i].data().iter().enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
