//! Image-shaped primitives on `[N, C, H, W]` tensors.

use alloc::vec;
use alloc::vec::Vec;

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Output extent of a convolution along one axis.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Output columns `[lo, hi)` whose input column `ox·stride + kx − pad` is in range.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let mut lo = 0;
        while lo < self.wo && (lo * self.stride + kx) < self.pad {
            lo += 1;
        }
        let mut hi = lo;
        while hi < self.wo && hi * self.stride + kx < self.w + self.pad {
            hi += 1;
        }
        (lo, hi)
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let p = g.ho * g.wo;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let dst = &mut col[row + oy * g.wo..row + (oy + 1) * g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = lo + kx - g.pad;
                        dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate().take(hi).skip(lo) {
                            *d = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    let p = g.ho * g.wo;
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &col[row + oy * g.wo..row + (oy + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let start = lo + kx - g.pad;
                        for (d, &v) in dst[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *d += v;
                        }
                    } else {
                        for ox in lo..hi {
                            dst[ox * g.stride + kx - g.pad] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    let (&[_, c, h, wd], &[_, wc, kh, kw]) = (x, w) else {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x.to_vec(),
            rhs: w.to_vec(),
        });
    };
    if c != wc {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x.to_vec(),
            rhs: w.to_vec(),
        });
    }
    let (Some(ho), Some(wo)) = (
        conv_output_size(h, kh, stride, pad),
        conv_output_size(wd, kw, stride, pad),
    ) else {
        return Err(Error::InvalidShape {
            op: "conv2d",
            detail: alloc::format!("kernel {kh}x{kw} larger than padded input {h}x{wd}"),
        });
    };
    Ok(ConvGeom {
        c,
        h,
        w: wd,
        kh,
        kw,
        stride,
        pad,
        ho,
        wo,
    })
}

fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, g: &ConvGeom) -> Tensor<T> {
    let n = x.shape()[0];
    let o = w.shape()[0];
    let k = g.col_rows();
    let p = g.ho * g.wo;
    let mut out = vec![T::zero(); n * o * p];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let in_len = g.c * g.h * g.w;
    for s in 0..n {
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        let cols: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, &mut col);
            &col
        };
        let ys = &mut out[s * o * p..(s + 1) * o * p];
        T::gemm(o, k, p, w.data(), false, cols, false, ys, false);
        if let Some(b) = b {
            for (oc, &bias) in b.data().iter().enumerate() {
                for v in &mut ys[oc * p..(oc + 1) * p] {
                    *v += bias;
                }
            }
        }
    }
    Tensor::from_vec(&[n, o, g.ho, g.wo], out).expect("conv output shape")
}

/// Gradients of a convolution with respect to its input and weight,
/// computed only where `need` is set.
pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need: [bool; 2],
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let g = conv_geom(x.shape(), w.shape(), stride, pad).expect("validated in forward");
    let n = x.shape()[0];
    let o = w.shape()[0];
    let k = g.col_rows();
    let p = g.ho * g.wo;
    let in_len = g.c * g.h * g.w;
    let mut gx = need[0].then(|| Tensor::zeros(x.shape()));
    let mut gw = need[1].then(|| Tensor::zeros(w.shape()));
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for s in 0..n {
        let gys = &gy.data()[s * o * p..(s + 1) * o * p];
        if let Some(gw) = gw.as_mut() {
            let xs = &x.data()[s * in_len..(s + 1) * in_len];
            let cols: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, &g, &mut col);
                &col
            };
            T::gemm(o, p, k, gys, false, cols, true, gw.data_mut(), true);
        }
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx.data_mut()[s * in_len..(s + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(k, o, p, w.data(), true, gys, false, gxs, false);
            } else {
                T::gemm(k, o, p, w.data(), true, gys, false, &mut col, false);
                col2im(&col, &g, gxs);
            }
        }
    }
    (gx, gw)
}

pub(crate) fn bias_grad<T: Real>(gy: &Tensor<T>) -> Tensor<T> {
    let [n, o, h, w] = [gy.shape()[0], gy.shape()[1], gy.shape()[2], gy.shape()[3]];
    let mut out = vec![T::zero(); o];
    for s in 0..n {
        for (oc, acc) in out.iter_mut().enumerate() {
            let start = (s * o + oc) * h * w;
            *acc += gy.data()[start..start + h * w].iter().copied().sum::<T>();
        }
    }
    Tensor::from_vec(&[o], out).expect("bias shape")
}

pub(crate) fn scatter_argmax<T: Real>(g: &Tensor<T>, argmax: &[u32], shape: &[usize]) -> Tensor<T> {
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    for (&gv, &i) in g.data().iter().zip(argmax) {
        od[i as usize] += gv;
    }
    out
}

/// Per-axis interpolation table for half-pixel bilinear upsampling:
/// `(lower index, upper index, weight of upper)` for every output position.
fn interp_table<T: Real>(input: usize, factor: usize) -> Vec<(usize, usize, T)> {
    let f = factor as f64;
    (0..input * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / f - 0.5).max(0.0);
            let i0 = (src as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, T::lit(src - i0 as f64))
        })
        .collect()
}

#[inline]
fn lerp<T: Real>(a: T, b: T, t: T) -> T {
    a + t * (b - a)
}

pub(crate) fn upsample_backward<T: Real>(g: &Tensor<T>, shape: &[usize], factor: usize) -> Tensor<T> {
    let [n, c, h, w] = [shape[0], shape[1], shape[2], shape[3]];
    let (ho, wo) = (h * factor, w * factor);
    let ty = interp_table::<T>(h, factor);
    let tx = interp_table::<T>(w, factor);
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    for plane in 0..n * c {
        let src = &g.data()[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut od[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let gv = src[oy * wo + ox];
                let top = gv * (T::one() - ly);
                let bot = gv * ly;
                dst[y0 * w + x0] += top * (T::one() - lx);
                dst[y0 * w + x1] += top * lx;
                dst[y1 * w + x0] += bot * (T::one() - lx);
                dst[y1 * w + x1] += bot * lx;
            }
        }
    }
    out
}

/// Batch statistics of one training-mode normalization, for running-average
/// updates.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance estimate.
    pub var: Vec<T>,
}

pub(crate) fn batch_norm_backward<T: Real>(
    g: &Tensor<T>,
    xhat: &[T],
    inv_std: &[T],
    gamma: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = [g.shape()[0], g.shape()[1], g.shape()[2], g.shape()[3]];
    let hw = h * w;
    let m = T::lit((n * hw) as f64);
    let gd = g.data();
    let mut gbeta = vec![T::zero(); c];
    let mut ggamma = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                gbeta[ch] += gd[i];
                ggamma[ch] += gd[i] * xhat[i];
            }
        }
    }
    let mut gx = vec![T::zero(); gd.len()];
    for s in 0..n {
        for ch in 0..c {
            let k = gamma.data()[ch] * inv_std[ch] / m;
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                gx[i] = k * (m * gd[i] - gbeta[ch] - xhat[i] * ggamma[ch]);
            }
        }
    }
    (
        Tensor::from_vec(g.shape(), gx).expect("same shape"),
        Tensor::from_vec(&[c], ggamma).expect("channel shape"),
        Tensor::from_vec(&[c], gbeta).expect("channel shape"),
    )
}

pub(crate) fn global_avg_pool_backward<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let hw = shape[2] * shape[3];
    let inv = T::one() / T::lit(hw as f64);
    let mut out = Tensor::zeros(shape);
    for (plane, &gv) in g.data().iter().enumerate() {
        out.data_mut()[plane * hw..(plane + 1) * hw].fill(gv * inv);
    }
    out
}

impl<T: Real> Tape<T> {
    /// Cross-correlation with zero padding. `x: [N,C,H,W]`, `w: [O,C,kH,kW]`,
    /// `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let g = conv_geom(self.shape(x), self.shape(w), stride, pad)?;
        if let Some(b) = b {
            if self.shape(b) != [self.shape(w)[0]] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: self.shape(w).to_vec(),
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let v = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &g);
        self.push("conv2d", v, Op::Conv2d { x, w, b, stride, pad })
    }

    /// 2×2 max pooling with stride 2. Ties route the gradient to the first
    /// element of the window in row-major order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidShape {
                op: "maxpool2",
                detail: alloc::format!("odd spatial size {h}x{w}"),
            });
        }
        let (ho, wo) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for idx in [best + 1, best + w, best + w + 1] {
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let v = Tensor::from_vec(&[n, c, ho, wo], out)?;
        self.push("maxpool2", v, Op::MaxPool2 { x, argmax })
    }

    /// Bilinear upsampling by an integer factor with half-pixel centres
    /// (corner alignment disabled).
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("upsample_bilinear")?;
        if factor == 0 {
            return Err(Error::InvalidShape {
                op: "upsample_bilinear",
                detail: "zero factor".into(),
            });
        }
        if factor == 1 {
            return Ok(x);
        }
        let (ho, wo) = (h * factor, w * factor);
        let ty = interp_table::<T>(h, factor);
        let tx = interp_table::<T>(w, factor);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for plane in 0..n * c {
            let src = &xd[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = lerp(src[y0 * w + x0], src[y0 * w + x1], lx);
                    let bot = lerp(src[y1 * w + x0], src[y1 * w + x1], lx);
                    dst[oy * wo + ox] = lerp(top, bot, ly);
                }
            }
        }
        let v = Tensor::from_vec(&[n, c, ho, wo], out)?;
        self.push("upsample_bilinear", v, Op::Upsample { x, factor })
    }

    pub fn upsample_bilinear2(&mut self, x: Var) -> Result<Var> {
        self.upsample_bilinear(x, 2)
    }

    /// Training-mode batch normalization over `(N, H, W)` per channel.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let [n, c, h, w] = self.value(x).dims4("batch_norm")?;
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::ShapeMismatch {
                    op: "batch_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let hw = h * w;
        let count = n * hw;
        let m = T::lit(count as f64);
        let xd = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                mean[ch] += xd[base..base + hw].iter().copied().sum::<T>();
            }
        }
        for v in &mut mean {
            *v /= m;
        }
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for &v in &xd[base..base + hw] {
                    let d = v - mean[ch];
                    var[ch] += d * d;
                }
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v / m + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                    out[i] = gd[ch] * xhat[i] + bd[ch];
                }
            }
        }
        let unbiased = if count > 1 { T::lit((count - 1) as f64) } else { T::one() };
        let stats = BatchStats {
            mean,
            var: var.iter().map(|&v| v / unbiased).collect(),
        };
        let v = Tensor::from_vec(&[n, c, h, w], out)?;
        let y = self.push(
            "batch_norm",
            v,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )?;
        Ok((y, stats))
    }

    /// Spatial mean per channel: `[N,C,H,W] → [N,C,1,1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("global_avg_pool")?;
        let inv = T::one() / T::lit((h * w) as f64);
        let xd = self.value(x).data();
        let out = (0..n * c)
            .map(|p| xd[p * h * w..(p + 1) * h * w].iter().copied().sum::<T>() * inv)
            .collect();
        let v = Tensor::from_vec(&[n, c, 1, 1], out)?;
        self.push("global_avg_pool", v, Op::GlobalAvgPool(x))
    }

    /// Spatial maximum per channel: `[N,C,H,W] → [N,C,1,1]`.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("global_max_pool")?;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for p in 0..n * c {
            let base = p * h * w;
            let mut best = base;
            for i in base + 1..base + h * w {
                if xd[i] > xd[best] {
                    best = i;
                }
            }
            out.push(xd[best]);
            argmax.push(best as u32);
        }
        let v = Tensor::from_vec(&[n, c, 1, 1], out)?;
        self.push("global_max_pool", v, Op::GlobalMaxPool { x, argmax })
    }
}
