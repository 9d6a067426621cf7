//! Element-wise primitives with trailing-axis broadcasting.

use alloc::vec;
use alloc::vec::Vec;

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            _ if da == db => da,
            (1, d) | (d, 1) => d,
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` laid against `out`, with zero stride on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output index with the matching flat offsets into both inputs.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let total: usize = out.iter().product();
    let mut index = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    while o < total {
        for j in 0..inner {
            f(o + j, oa + j * la, ob + j * lb);
        }
        o += inner;
        for d in (0..rank - 1).rev() {
            index[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if index[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            index[d] = 0;
        }
    }
}

fn binary<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_vec(a.shape(), data);
    }
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &shape);
    let sb = broadcast_strides(b.shape(), &shape);
    let mut data = vec![T::zero(); shape.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&shape, &sa, &sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
    Tensor::from_vec(&shape, data)
}

/// Sums `g` (shaped like the broadcast output) down to `shape`.
pub(crate) fn reduce_to<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let s = broadcast_strides(shape, g.shape());
    let zero = vec![0; g.rank()];
    let mut acc = Tensor::zeros(shape);
    let (gd, ad) = (g.data(), acc.data_mut());
    for_each_broadcast(g.shape(), &s, &zero, |o, i, _| ad[i] += gd[o]);
    acc
}

/// Gradient of `a ⊙ b` with respect to the operand shaped `shape`, where
/// `other` is the remaining operand.
pub(crate) fn mul_grad<T: Real>(g: &Tensor<T>, other: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape && other.shape() == shape {
        let data = g.data().iter().zip(other.data()).map(|(&x, &y)| x * y).collect();
        return Tensor::from_vec(shape, data).expect("same shape");
    }
    let s_self = broadcast_strides(shape, g.shape());
    let s_other = broadcast_strides(other.shape(), g.shape());
    let mut acc = Tensor::zeros(shape);
    let (gd, od, ad) = (g.data(), other.data(), acc.data_mut());
    for_each_broadcast(g.shape(), &s_self, &s_other, |o, i, j| ad[i] += gd[o] * od[j]);
    acc
}

pub(crate) fn div_grad_num<T: Real>(g: &Tensor<T>, den: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let s_self = broadcast_strides(shape, g.shape());
    let s_den = broadcast_strides(den.shape(), g.shape());
    let mut acc = Tensor::zeros(shape);
    let (gd, dd, ad) = (g.data(), den.data(), acc.data_mut());
    for_each_broadcast(g.shape(), &s_self, &s_den, |o, i, j| ad[i] += gd[o] / dd[j]);
    acc
}

pub(crate) fn div_grad_den<T: Real>(g: &Tensor<T>, num: &Tensor<T>, den: &Tensor<T>) -> Tensor<T> {
    let s_num = broadcast_strides(num.shape(), g.shape());
    let s_den = broadcast_strides(den.shape(), g.shape());
    let mut acc = Tensor::zeros(den.shape());
    let (gd, nd, dd) = (g.data(), num.data(), den.data());
    let ad = acc.data_mut();
    for_each_broadcast(g.shape(), &s_num, &s_den, |o, i, j| {
        ad[j] -= gd[o] * nd[i] / (dd[j] * dd[j]);
    });
    acc
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary("add", self.value(a), self.value(b), |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary("sub", self.value(a), self.value(b), |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary("mul", self.value(a), self.value(b), |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().iter().any(|&d| d == T::zero()) {
            return Err(Error::Domain {
                op: "div",
                detail: "zero divisor".into(),
            });
        }
        let v = binary("div", self.value(a), self.value(b), |x, y| x / y)?;
        self.push("div", v, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * k);
        self.push("scale", v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Result<Var> {
        let v = self.value(a).map(|x| x + k);
        self.push("add_scalar", v, Op::AddScalar(a))
    }

    /// `k - a`
    pub fn rsub_scalar(&mut self, k: T, a: Var) -> Result<Var> {
        let neg = self.scale(a, -T::one())?;
        self.add_scalar(neg, k)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(bad) = x.data().iter().find(|&&v| !(v > T::zero())) {
            return Err(Error::Domain {
                op: "ln",
                detail: alloc::format!("non-positive argument {bad}"),
            });
        }
        let v = x.map(|x| x.ln());
        self.push("ln", v, Op::Ln(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.tanh());
        self.push("tanh", v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push("relu", v, Op::Relu(a))
    }

    /// Clamps into `[lo, hi]`; the gradient passes through on the closed
    /// interval and is zero outside it.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::Domain {
                op: "clamp",
                detail: alloc::format!("empty interval [{lo}, {hi}]"),
            });
        }
        let x = self.value(a);
        if x.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Domain {
                op: "clamp",
                detail: "NaN argument".into(),
            });
        }
        let v = x.map(|x| x.max(lo).min(hi));
        self.push("clamp", v, Op::Clamp { x: a, lo, hi })
    }
}
