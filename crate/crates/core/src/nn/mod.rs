//! Layers built on the tape, plus parameter bookkeeping.

mod accounting;
mod attention;
mod batchnorm;
mod conv;
mod init;

use alloc::string::String;
use alloc::vec::Vec;

use crate::real::Real;
use crate::tensor::Tensor;

pub use accounting::{conv_chain_macs, param_count};
pub use attention::ChannelAttention;
pub use batchnorm::{BatchNorm2d, Mode};
pub use conv::Conv2d;
pub use init::{kaiming_fill, kaiming_init, kaiming_std};

/// Stable index of a parameter within one model, assigned at construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Optimized by gradient descent.
    Trainable,
    /// Persistent state that is not optimized (normalization running stats).
    Buffer,
}

/// A named tensor owned by a layer.
#[derive(Clone, Debug)]
pub struct Param<T> {
    id: ParamId,
    name: String,
    kind: ParamKind,
    value: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Trainable
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        &mut self.value
    }
}

/// Hands out parameter ids in construction order.
#[derive(Debug, Default)]
pub struct ParamRegistry {
    next: u32,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create<T: Real>(&mut self, name: String, kind: ParamKind, value: Tensor<T>) -> Param<T> {
        let id = ParamId(self.next);
        self.next += 1;
        Param { id, name, kind, value }
    }

    pub fn count(&self) -> usize {
        self.next as usize
    }
}

/// A tree of layers whose parameters can be enumerated in a fixed order.
pub trait Module<T: Real> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    /// Every parameter (trainable and buffer) in visiting order.
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p));
        out
    }
}

impl<T: Real, M: Module<T>> Module<T> for Option<M> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        if let Some(m) = self {
            m.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(m) = self {
            m.visit_mut(f);
        }
    }
}

impl<T: Real, M: Module<T>> Module<T> for Vec<M> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for m in self {
            m.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for m in self {
            m.visit_mut(f);
        }
    }
}
