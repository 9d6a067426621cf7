//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied to its variables in execution
//! order, so the node list is always a topological order of the computation
//! graph. [`Tape::backward`] walks it once in reverse. Tapes are rebuilt for
//! every forward pass and may be differentiated only once.

mod elementwise;
mod reduce;
mod spatial;

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{Param, ParamId};
use crate::real::Real;
use crate::tensor::Tensor;

pub use spatial::{conv_output_size, BatchStats};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Ln(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Clamp { x: Var, lo: T, hi: T },
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    Softmax { x: Var, axis: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample { x: Var, factor: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    GlobalAvgPool(Var),
    GlobalMaxPool { x: Var, argmax: Vec<u32> },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Recording of one forward computation.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    params: Vec<Option<Var>>,
    param_grads_enabled: bool,
    grads: Option<Vec<Option<Tensor<T>>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            param_grads_enabled: true,
            grads: None,
        }
    }

    /// A tape on which model parameters are bound as constants.
    pub fn inference() -> Self {
        Tape {
            param_grads_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var((self.nodes.len() - 1) as u32)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Binds a model parameter. Binding the same parameter twice yields the
    /// same variable, so shared weights accumulate a single gradient.
    pub fn param(&mut self, p: &Param<T>) -> Var {
        let id = p.id().index();
        if let Some(Some(v)) = self.params.get(id) {
            return *v;
        }
        let v = self.leaf(p.value().clone(), self.param_grads_enabled && p.is_trainable());
        self.bind_param(p.id(), v);
        v
    }

    /// Routes every later [`Tape::param`] lookup of `id` to `var`.
    pub fn bind_param(&mut self, id: ParamId, var: Var) {
        let i = id.index();
        if self.params.len() <= i {
            self.params.resize(i + 1, None);
        }
        self.params[i] = Some(var);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.index()].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.index()].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index()].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to a leaf.
    ///
    /// `None` when the leaf does not require gradients or backward has not
    /// run yet.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.as_ref()?.get(v.index())?.as_ref()
    }

    pub fn param_grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        let v = (*self.params.get(id.index())?)?;
        self.grad(v)
    }

    pub(crate) fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = op.inputs().any(|v| self.nodes[v.index()].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var((self.nodes.len() - 1) as u32))
    }

    /// Populates gradients of `loss` with respect to every leaf that
    /// requires them. Leaves not reachable from `loss` get zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::AlreadyDifferentiated);
        }
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::NotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.requires_grad(loss) {
            grads[loss.index()] = Some(Tensor::full(loss_value.shape(), T::one()));
        }
        for i in (0..=loss.index()).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, contribution) in self.local_grads(i, &g) {
                accumulate(&mut grads[input.index()], contribution);
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for each input that requires a
    /// gradient.
    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut out = Vec::new();
        let mut emit = |v: Var, f: &mut dyn FnMut() -> Tensor<T>| {
            if self.nodes[v.index()].requires_grad {
                out.push((v, f()));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(*a, &mut || elementwise::reduce_to(g, self.shape(*a)));
                emit(*b, &mut || elementwise::reduce_to(g, self.shape(*b)));
            }
            Op::Sub(a, b) => {
                emit(*a, &mut || elementwise::reduce_to(g, self.shape(*a)));
                emit(*b, &mut || elementwise::reduce_to(g, self.shape(*b)).map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                emit(*a, &mut || elementwise::mul_grad(g, vb, va.shape()));
                emit(*b, &mut || elementwise::mul_grad(g, va, vb.shape()));
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                emit(*a, &mut || elementwise::div_grad_num(g, vb, va.shape()));
                emit(*b, &mut || elementwise::div_grad_den(g, va, vb));
            }
            Op::Scale(a, k) => emit(*a, &mut || g.map(|v| v * *k)),
            Op::AddScalar(a) => emit(*a, &mut || g.clone()),
            Op::Ln(a) => {
                let x = self.value(*a);
                emit(*a, &mut || zip_map(g, x, |g, x| g / x));
            }
            Op::Sigmoid(a) => emit(*a, &mut || zip_map(g, y, |g, s| g * s * (T::one() - s))),
            Op::Tanh(a) => emit(*a, &mut || zip_map(g, y, |g, t| g * (T::one() - t * t))),
            Op::Relu(a) => emit(*a, &mut || {
                zip_map(g, y, |g, r| if r > T::zero() { g } else { T::zero() })
            }),
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                emit(*x, &mut || {
                    zip_map(g, xv, |g, v| if v < *lo || v > *hi { T::zero() } else { g })
                });
            }
            Op::Sum(a) => emit(*a, &mut || Tensor::full(self.shape(*a), g.item())),
            Op::Mean(a) => emit(*a, &mut || {
                let n = T::lit(self.value(*a).len() as f64);
                Tensor::full(self.shape(*a), g.item() / n)
            }),
            Op::SumAxis { x, axis } => emit(*x, &mut || reduce::sum_axis_grad(g, self.shape(*x), *axis)),
            Op::Softmax { x, axis } => emit(*x, &mut || reduce::softmax_grad(g, y, *axis)),
            Op::Concat { inputs, axis } => {
                let shapes: Vec<&[usize]> = inputs.iter().map(|v| self.shape(*v)).collect();
                let mut parts = reduce::concat_grad(g, &shapes, *axis).into_iter();
                for v in inputs {
                    let part = parts.next().expect("one gradient per concat input");
                    if self.requires_grad(*v) {
                        out.push((*v, part));
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                emit(*x, &mut || reduce::slice_grad(g, self.shape(*x), *axis, *start))
            }
            Op::Reshape(a) => emit(*a, &mut || {
                g.clone().reshaped(self.shape(*a)).expect("reshape preserves length")
            }),
            Op::Conv2d { x, w, b, stride, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let need = [self.requires_grad(*x), self.requires_grad(*w)];
                let (gx, gw) = spatial::conv2d_backward(xv, wv, g, *stride, *pad, need);
                if let Some(gx) = gx {
                    out.push((*x, gx));
                }
                if let Some(gw) = gw {
                    out.push((*w, gw));
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        out.push((*b, spatial::bias_grad(g)));
                    }
                }
            }
            Op::MaxPool2 { x, argmax } | Op::GlobalMaxPool { x, argmax } => {
                emit(*x, &mut || spatial::scatter_argmax(g, argmax, self.shape(*x)))
            }
            Op::Upsample { x, factor } => {
                emit(*x, &mut || spatial::upsample_backward(g, self.shape(*x), *factor))
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                let gv = self.value(*gamma);
                let (gx, ggamma, gbeta) = spatial::batch_norm_backward(g, xhat, inv_std, gv);
                if self.requires_grad(*x) {
                    out.push((*x, gx));
                }
                if self.requires_grad(*gamma) {
                    out.push((*gamma, ggamma));
                }
                if self.requires_grad(*beta) {
                    out.push((*beta, gbeta));
                }
            }
            Op::GlobalAvgPool(x) => emit(*x, &mut || spatial::global_avg_pool_backward(g, self.shape(*x))),
        }
        out
    }
}

impl<T> Op<T> {
    fn inputs(&self) -> impl Iterator<Item = Var> + '_ {
        let (fixed, list): ([Option<Var>; 3], &[Var]) = match self {
            Op::Leaf => ([None, None, None], &[]),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                ([Some(*a), Some(*b), None], &[])
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Ln(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::GlobalAvgPool(a) => ([Some(*a), None, None], &[]),
            Op::Clamp { x, .. }
            | Op::SumAxis { x, .. }
            | Op::Softmax { x, .. }
            | Op::Slice { x, .. }
            | Op::MaxPool2 { x, .. }
            | Op::Upsample { x, .. }
            | Op::GlobalMaxPool { x, .. } => ([Some(*x), None, None], &[]),
            Op::Concat { inputs, .. } => ([None, None, None], inputs.as_slice()),
            Op::Conv2d { x, w, b, .. } => ([Some(*x), Some(*w), *b], &[]),
            Op::BatchNorm { x, gamma, beta, .. } => ([Some(*x), Some(*gamma), Some(*beta)], &[]),
        };
        fixed.into_iter().flatten().chain(list.iter().copied())
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, contribution: Tensor<T>) {
    match slot {
        Some(existing) => existing.add_assign(&contribution),
        None => *slot = Some(contribution),
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

pub(crate) fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::InvalidShape {
            op,
            detail: alloc::format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    Ok(())
}
