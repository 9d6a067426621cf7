//! Adam with decoupled weight decay and the step-decay schedule.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::nn::{Module, ParamId};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Learning rate `base · factor^⌊epoch / period⌋`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub factor: f64,
    pub period: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            base_lr: 1e-3,
            factor: 0.5,
            period: 8,
        }
    }
}

impl Schedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        let decays = if self.period == 0 { 0 } else { epoch / self.period };
        self.base_lr * Float::powi(self.factor, decays as i32)
    }
}

/// The default schedule: 0.001 halved every 8 epochs.
pub fn lr_at_epoch(epoch: usize) -> f64 {
    Schedule::default().lr(epoch)
}

/// Moment estimates, one pair per trainable parameter in visiting order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub moments: Vec<Moments<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new<M: Module<T> + ?Sized>(model: &M) -> Self {
        let mut moments = Vec::new();
        model.visit(&mut |p| {
            if p.is_trainable() {
                moments.push(Moments {
                    m: Tensor::zeros(p.value().shape()),
                    v: Tensor::zeros(p.value().shape()),
                });
            }
        });
        AdamState { step: 0, moments }
    }

    /// One update of every trainable parameter of `model`.
    ///
    /// Parameters for which `grad` returns `None` are left untouched. If any
    /// gradient contains a non-finite value, nothing is modified and the
    /// error names the parameter.
    pub fn step<'g, M, G>(&mut self, adam: &Adam, model: &mut M, grad: G, lr: f64) -> Result<()>
    where
        M: Module<T> + ?Sized,
        G: Fn(ParamId) -> Option<&'g Tensor<T>>,
        T: 'g,
    {
        let mut trainable = 0;
        let mut problem = None;
        model.visit(&mut |p| {
            if !p.is_trainable() {
                return;
            }
            trainable += 1;
            if let Some(g) = grad(p.id()) {
                if problem.is_none() {
                    if g.shape() != p.value().shape() {
                        problem = Some(Error::ShapeMismatch {
                            op: "adam_step",
                            lhs: p.value().shape().to_vec(),
                            rhs: g.shape().to_vec(),
                        });
                    } else if !g.is_finite() {
                        problem = Some(Error::NonFiniteGradient(format!("{} (id {})", p.name(), p.id().index())));
                    }
                }
            }
        });
        if let Some(e) = problem {
            return Err(e);
        }
        if trainable != self.moments.len() {
            return Err(Error::Invalid(format!(
                "optimizer state holds {} parameters, model has {trainable}",
                self.moments.len()
            )));
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(adam.beta1), T::lit(adam.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::lit(1.0 - Float::powi(adam.beta1, t));
        let bc2 = T::lit(1.0 - Float::powi(adam.beta2, t));
        let eps = T::lit(adam.eps);
        let lr_t = T::lit(lr);
        let decay = T::lit(lr * adam.weight_decay);
        let mut idx = 0;
        let moments = &mut self.moments;
        model.visit_mut(&mut |p| {
            if !p.is_trainable() {
                return;
            }
            let slot = &mut moments[idx];
            idx += 1;
            let Some(g) = grad(p.id()) else { return };
            let theta = p.value_mut().data_mut();
            let (m, v) = (slot.m.data_mut(), slot.v.data_mut());
            for i in 0..theta.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + c1 * gi;
                v[i] = b2 * v[i] + c2 * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] = theta[i] - lr_t * m_hat / (v_hat.sqrt() + eps) - decay * theta[i];
            }
        });
        Ok(())
    }
}
