//! ADAM optimizer and learning-rate schedule.

use alloc::vec::Vec;

use crate::error::{usage_err, Result};
use crate::params::{ParamId, ParamStore};
use crate::{Scalar, Tensor};

/// ADAM hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for every parameter of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    /// Number of completed steps.
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { config, t: 0, m: zeros(), v: zeros() }
    }

    /// One bias-corrected update at the configured learning rate.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        self.step_with_lr(params, grads, self.config.lr)
    }

    /// One bias-corrected update at learning rate `lr`:
    ///
    /// `m <- b1 m + (1 - b1) g`, `v <- b2 v + (1 - b2) g²`,
    /// `p <- p - lr · m̂ / (sqrt(v̂) + eps)` with `m̂ = m / (1 - b1^t)` and
    /// `v̂ = v / (1 - b2^t)`.
    ///
    /// `grads[i]` belongs to parameter `i`; a missing entry fails the whole
    /// step before anything is modified.
    pub fn step_with_lr(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(usage_err!(
                "optimizer tracks {} parameters, store has {}, got {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            let name = params.name(ParamId(i));
            match g {
                None => return Err(usage_err!("missing gradient for parameter {name}")),
                Some(g) if g.shape() != params.get(ParamId(i)).shape() => {
                    return Err(usage_err!(
                        "gradient {} does not match parameter {name} of shape {}",
                        g.shape(),
                        params.get(ParamId(i)).shape()
                    ))
                }
                _ => {}
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.t as f64);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let (inv_bc1, inv_bc2) = (T::from_f64(1.0 / bc1), T::from_f64(1.0 / bc2));
        let (lr, eps) = (T::from_f64(lr), T::from_f64(c.eps));
        for (i, g) in grads.iter().enumerate() {
            let g = g.as_ref().expect("checked above");
            let p = params.get_mut(ParamId(i)).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + ob1 * gj;
                v[j] = b2 * v[j] + ob2 * gj * gj;
                let mhat = m[j] * inv_bc1;
                let vhat = v[j] * inv_bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step learning rate: `base` halved once at each decay point reached.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub decay_at: Vec<u64>,
}

impl LrSchedule {
    pub fn new(base: f64, halve_at: u64) -> Self {
        LrSchedule { base, decay_at: alloc::vec![halve_at] }
    }

    pub fn with_extra_decays(mut self, points: &[u64]) -> Self {
        self.decay_at.extend_from_slice(points);
        self
    }

    pub fn at(&self, iter: u64) -> f64 {
        let halvings = self.decay_at.iter().filter(|&&p| iter >= p).count();
        self.base * libm::pow(0.5, halvings as f64)
    }
}
