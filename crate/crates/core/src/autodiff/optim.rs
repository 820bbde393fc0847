use std::sync::Arc;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::params::Params;
use super::{lit, AutodiffError, Float, Result};

/// Hyper-parameters of [`Adam`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Option<ArrayD<T>>>,
    second: Vec<Option<ArrayD<T>>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the `grad` slots of `params`. Tensors without
    /// a gradient are left untouched. Gradients are not cleared.
    pub fn step(&mut self, params: &mut Params<T>) -> Result<()> {
        if self.first.len() < params.len() {
            self.first.resize(params.len(), None);
            self.second.resize(params.len(), None);
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (lit::<T>(c.beta1), lit::<T>(c.beta2));
        let bc1 = lit::<T>(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = lit::<T>(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (lit::<T>(c.lr), lit::<T>(c.eps));
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for id in ids {
            let t = params.get_mut(id);
            if !t.requires_grad {
                continue;
            }
            let Some(grad) = t.grad.as_ref() else {
                continue;
            };
            if grad.shape() != t.value.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam",
                    lhs: t.value.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            let m = self.first[id.0].get_or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let v = self.second[id.0].get_or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            m.zip_mut_with(grad, |m, &g| *m = b1 * *m + (T::one() - b1) * g);
            v.zip_mut_with(grad, |v, &g| *v = b2 * *v + (T::one() - b2) * g * g);
            let value = Arc::make_mut(&mut t.value);
            ndarray::Zip::from(value).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
        Ok(())
    }
}
