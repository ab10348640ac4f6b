//! Adam with decoupled weight decay.

use xint_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one store, in store order.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Adam {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One update of every trainable parameter at learning rate `lr`:
    /// `p -= lr * wd * p`, then the bias-corrected Adam step. A parameter
    /// without a gradient is updated as if its gradient were zero. Any
    /// non-finite gradient aborts the step before anything changes.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.m.len() != store.params().len() {
            return Err(Error::Checkpoint(format!(
                "optimizer tracks {} parameters, model has {}",
                self.m.len(),
                store.params().len()
            )));
        }
        for p in store.params() {
            if p.trainable && p.grad.as_ref().is_some_and(|g| !g.all_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient for {}", p.name)));
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let f = T::from_f64_lossy;
        let (b1, b2, eps, decay) = (f(c.beta1), f(c.beta2), f(c.eps), f(lr * c.weight_decay));
        let (step, bc1, bc2) = (f(lr), f(bc1), f(bc2));
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.as_ref().map(|g| g.data());
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad.map_or(T::zero(), |g| g[j]);
                *w = *w - decay * *w;
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w = *w - step * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
