use alloc::format;

use super::{Module, Param, ParamKind, ParamRegistry};
use crate::error::Result;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Whether normalization layers use batch statistics (and update their
/// running averages) or the stored running averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    scale: Param<T>,
    shift: Param<T>,
    running_mean: Param<T>,
    running_var: Param<T>,
    eps: T,
    momentum: T,
}

impl<T: Real> BatchNorm2d<T> {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(reg: &mut ParamRegistry, name: &str, channels: usize) -> Self {
        BatchNorm2d {
            scale: reg.create(format!("{name}.scale"), ParamKind::Trainable, Tensor::ones(&[channels])),
            shift: reg.create(format!("{name}.shift"), ParamKind::Trainable, Tensor::zeros(&[channels])),
            running_mean: reg.create(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[channels])),
            running_var: reg.create(format!("{name}.running_var"), ParamKind::Buffer, Tensor::ones(&[channels])),
            eps: T::lit(Self::EPS),
            momentum: T::lit(Self::MOMENTUM),
        }
    }

    pub fn running_mean(&self) -> &Tensor<T> {
        self.running_mean.value()
    }

    pub fn running_var(&self) -> &Tensor<T> {
        self.running_var.value()
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = tape.param(&self.scale);
        let beta = tape.param(&self.shift);
        match mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm_train(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                let keep = T::one() - m;
                for (r, s) in self.running_mean.value.data_mut().iter_mut().zip(&stats.mean) {
                    *r = keep * *r + m * *s;
                }
                for (r, s) in self.running_var.value.data_mut().iter_mut().zip(&stats.var) {
                    *r = keep * *r + m * *s;
                }
                Ok(y)
            }
            Mode::Eval => {
                let c = self.running_mean.value.len();
                let inv_std = self.running_var.value.map(|v| T::one() / (v + self.eps).sqrt());
                let inv_std = tape.constant(inv_std);
                let mean = tape.constant(self.running_mean.value.clone());
                let a = tape.mul(gamma, inv_std)?;
                let am = tape.mul(a, mean)?;
                let b = tape.sub(beta, am)?;
                let a = tape.reshape(a, &[1, c, 1, 1])?;
                let b = tape.reshape(b, &[1, c, 1, 1])?;
                let y = tape.mul(x, a)?;
                tape.add(y, b)
            }
        }
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.scale);
        f(&self.shift);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.scale);
        f(&mut self.shift);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}
