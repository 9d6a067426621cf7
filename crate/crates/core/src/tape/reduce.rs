//! Reductions, axis-wise softmax and shape manipulation.

use alloc::vec;
use alloc::vec::Vec;

use super::{check_axis, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// `(outer, extent, inner)` decomposition of `shape` around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn sum_axis_grad<T: Real>(g: &Tensor<T>, shape: &[usize], axis: usize) -> Tensor<T> {
    let (outer, extent, inner) = split(shape, axis);
    let mut out = Tensor::zeros(shape);
    let (gd, od) = (g.data(), out.data_mut());
    for o in 0..outer {
        for k in 0..extent {
            let dst = (o * extent + k) * inner;
            od[dst..dst + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
        }
    }
    out
}

pub(crate) fn softmax_grad<T: Real>(g: &Tensor<T>, y: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, extent, inner) = split(y.shape(), axis);
    let mut out = Tensor::zeros(y.shape());
    let (gd, yd, od) = (g.data(), y.data(), out.data_mut());
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            let mut dot = T::zero();
            for k in 0..extent {
                dot += gd[base + k * inner] * yd[base + k * inner];
            }
            for k in 0..extent {
                let j = base + k * inner;
                od[j] = yd[j] * (gd[j] - dot);
            }
        }
    }
    out
}

pub(crate) fn concat_grad<T: Real>(g: &Tensor<T>, shapes: &[&[usize]], axis: usize) -> Vec<Tensor<T>> {
    let (outer, total, inner) = split(g.shape(), axis);
    let gd = g.data();
    let mut offset = 0;
    shapes
        .iter()
        .map(|shape| {
            let extent = shape[axis];
            let mut part = Vec::with_capacity(outer * extent * inner);
            for o in 0..outer {
                let start = (o * total + offset) * inner;
                part.extend_from_slice(&gd[start..start + extent * inner]);
            }
            offset += extent;
            Tensor::from_vec(shape, part).expect("concat part shape")
        })
        .collect()
}

pub(crate) fn slice_grad<T: Real>(g: &Tensor<T>, shape: &[usize], axis: usize, start: usize) -> Tensor<T> {
    let (outer, total, inner) = split(shape, axis);
    let len = g.shape()[axis];
    let mut out = Tensor::zeros(shape);
    let (gd, od) = (g.data(), out.data_mut());
    for o in 0..outer {
        let dst = (o * total + start) * inner;
        od[dst..dst + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
    }
    out
}

impl<T: Real> Tape<T> {
    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let v = Tensor::scalar(x.sum() / T::lit(x.len() as f64));
        self.push("mean", v, Op::Mean(a))
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("sum_axis", self.shape(a), axis)?;
        let x = self.value(a);
        let (outer, extent, inner) = split(x.shape(), axis);
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        let mut out = vec![T::zero(); outer * inner];
        let xd = x.data();
        for o in 0..outer {
            for k in 0..extent {
                let src = (o * extent + k) * inner;
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(&xd[src..src + inner]) {
                    *d += s;
                }
            }
        }
        let v = Tensor::from_vec(&shape, out)?;
        self.push("sum_axis", v, Op::SumAxis { x: a, axis })
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("softmax", self.shape(a), axis)?;
        let x = self.value(a);
        let (outer, extent, inner) = split(x.shape(), axis);
        let xd = x.data();
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let mut max = T::neg_infinity();
                for k in 0..extent {
                    max = max.max(xd[base + k * inner]);
                }
                let mut total = T::zero();
                for k in 0..extent {
                    let e = (xd[base + k * inner] - max).exp();
                    out[base + k * inner] = e;
                    total += e;
                }
                for k in 0..extent {
                    out[base + k * inner] /= total;
                }
            }
        }
        let v = Tensor::from_vec(x.shape(), out)?;
        self.push("softmax", v, Op::Softmax { x: a, axis })
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| Error::InvalidShape {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let base = self.shape(first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let x = self.value(v);
                let chunk = x.shape()[axis] * inner;
                data.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let v = Tensor::from_vec(&shape, data)?;
        self.push(
            "concat",
            v,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        check_axis("slice", self.shape(a), axis)?;
        let x = self.value(a);
        if len == 0 || start + len > x.shape()[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                detail: alloc::format!("range {start}..{} outside axis {axis} of {:?}", start + len, x.shape()),
            });
        }
        let (outer, total, inner) = split(x.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * total + start) * inner;
            data.extend_from_slice(&x.data()[src..src + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let v = Tensor::from_vec(&shape, data)?;
        self.push("slice", v, Op::Slice { x: a, axis, start })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        self.push("reshape", v, Op::Reshape(a))
    }
}
