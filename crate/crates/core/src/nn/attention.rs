use alloc::format;

use super::{Conv2d, Module, Param, ParamRegistry};
use crate::error::Result;
use crate::real::Real;
use crate::tape::{Tape, Var};

/// Channel attention over pooled descriptors.
///
/// Global average and global max descriptors pass through a shared
/// two-layer perceptron (`C → C/r → C`, ReLU in between, no biases); the two
/// results are summed and squashed by a sigmoid, giving one weight in (0, 1)
/// per channel, shaped `[N, C, 1, 1]`.
#[derive(Clone, Debug)]
pub struct ChannelAttention<T> {
    reduce: Conv2d<T>,
    expand: Conv2d<T>,
}

impl<T: Real> ChannelAttention<T> {
    pub const DEFAULT_RATIO: usize = 4;

    pub fn new(reg: &mut ParamRegistry, name: &str, channels: usize, ratio: usize) -> Self {
        let hidden = (channels / ratio.max(1)).max(1);
        ChannelAttention {
            reduce: Conv2d::new(reg, &format!("{name}.fc1"), channels, hidden, 1, 1, 0, false),
            expand: Conv2d::new(reg, &format!("{name}.fc2"), hidden, channels, 1, 1, 0, false),
        }
    }

    pub fn channels(&self) -> usize {
        self.reduce.in_channels()
    }

    pub fn layers(&self) -> [&Conv2d<T>; 2] {
        [&self.reduce, &self.expand]
    }

    pub fn layers_mut(&mut self) -> [&mut Conv2d<T>; 2] {
        [&mut self.reduce, &mut self.expand]
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let avg = tape.global_avg_pool(x)?;
        let max = tape.global_max_pool(x)?;
        let a = self.mlp(tape, avg)?;
        let m = self.mlp(tape, max)?;
        let s = tape.add(a, m)?;
        tape.sigmoid(s)
    }

    fn mlp(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = self.reduce.forward(tape, x)?;
        let h = tape.relu(h)?;
        self.expand.forward(tape, h)
    }
}

impl<T: Real> Module<T> for ChannelAttention<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.reduce.visit(f);
        self.expand.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.reduce.visit_mut(f);
        self.expand.visit_mut(f);
    }
}
