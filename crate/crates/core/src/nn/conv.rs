use alloc::format;
use alloc::string::String;

use super::{Module, Param, ParamKind, ParamRegistry};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{conv_output_size, Tape, Var};
use crate::tensor::Tensor;

/// 2-D convolution (cross-correlation, no kernel flip) with square kernels
/// and zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    name: String,
    weight: Param<T>,
    bias: Option<Param<T>>,
    stride: usize,
    padding: usize,
}

impl<T: Real> Conv2d<T> {
    /// A zero-initialised layer; see [`super::kaiming_init`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        reg: &mut ParamRegistry,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        assert!(in_ch > 0 && out_ch > 0 && kernel > 0 && stride > 0);
        let weight = reg.create(
            format!("{name}.weight"),
            ParamKind::Trainable,
            Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
        );
        let bias = bias.then(|| reg.create(format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros(&[out_ch])));
        Conv2d {
            name: name.into(),
            weight,
            bias,
            stride,
            padding,
        }
    }

    /// Stride 1 with `(k − 1) / 2` padding, which keeps the spatial size.
    pub fn same(reg: &mut ParamRegistry, name: &str, in_ch: usize, out_ch: usize, kernel: usize, bias: bool) -> Self {
        Self::new(reg, name, in_ch, out_ch, kernel, 1, (kernel - 1) / 2, bias)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn weight(&self) -> &Param<T> {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Param<T> {
        &mut self.weight
    }

    pub fn bias(&self) -> Option<&Param<T>> {
        self.bias.as_ref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut Param<T>> {
        self.bias.as_mut()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.kernel();
        Some((
            conv_output_size(h, k, self.stride, self.padding)?,
            conv_output_size(w, k, self.stride, self.padding)?,
        ))
    }

    /// Multiply-accumulate count for a batch of `n` inputs of size `h × w`.
    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let (ho, wo) = self.output_hw(h, w).unwrap_or((0, 0));
        let k = self.kernel();
        (self.out_channels() * self.in_channels() * k * k * ho * wo * n) as u64
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1] != self.in_channels() {
            return Err(Error::InvalidShape {
                op: "conv2d",
                detail: format!(
                    "layer `{}` with weight {:?} expects {} input channels, got input {:?}",
                    self.name,
                    self.weight.value.shape(),
                    self.in_channels(),
                    shape
                ),
            });
        }
        let w = tape.param(&self.weight);
        let b = self.bias.as_ref().map(|b| tape.param(b));
        tape.conv2d(x, w, b, self.stride, self.padding)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}
