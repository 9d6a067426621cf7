//! Independent scalar-loop evaluations of the tape operations, and the
//! comparisons built on them. Comparisons panic on the first mismatch.

use rand::Rng;
use rflcd_core::model::{C2fgCell, ModelConfig, RflCdNet};
use rflcd_core::nn::{param_count, Module, ParamRegistry};
use rflcd_core::objective::{dice_loss, weighted_ce};
use rflcd_core::{Tape, Tensor};

use super::{binary, rng, uniform};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Half-pixel bilinear ×`f` upsampling of one `h × w` plane.
pub fn upsample(src: &[f64], h: usize, w: usize, f: usize) -> Vec<f64> {
    let coord = |o: usize, n: usize| {
        let s = ((o as f64 + 0.5) / f as f64 - 0.5).max(0.0);
        let lo = (s.floor() as usize).min(n - 1);
        (lo, (lo + 1).min(n - 1), s - lo as f64)
    };
    let mut out = vec![0.0; h * f * w * f];
    for oy in 0..h * f {
        let (y0, y1, ty) = coord(oy, h);
        for ox in 0..w * f {
            let (x0, x1, tx) = coord(ox, w);
            let at = |y: usize, x: usize| src[y * w + x];
            out[oy * w * f + ox] = (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x1))
                + ty * ((1.0 - tx) * at(y1, x0) + tx * at(y1, x1));
        }
    }
    out
}

/// Direct convolution of a `[C, H, W]` input with an `[O, C, k, k]` kernel.
pub fn conv(x: &[f64], c: usize, h: usize, w: usize, weight: &Tensor<f64>, bias: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (o, k) = (weight.shape()[0], weight.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let wd = weight.data();
    let mut out = vec![0.0; o * ho * wo];
    for oc in 0..o {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias[oc];
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += wd[((oc * c + ic) * k + ky) * k + kx] * x[(ic * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(oc * ho + oy) * wo + ox] = acc;
            }
        }
    }
    out
}

pub fn assert_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "{what}[{i}]: {g} vs {w}");
    }
}

/// Gate and candidate maps of one cell, evaluated pixel by pixel from the
/// upsampled previous hidden state and prediction and the stage feature.
pub struct CellOracle {
    pub prediction: Vec<f64>,
    pub hidden: Vec<f64>,
}

pub fn cell_oracle(cell: &C2fgCell<f64>, feature: &Tensor<f64>, prev_hidden: &Tensor<f64>, prev_pred: &Tensor<f64>) -> CellOracle {
    let [_, c, h, w] = feature.dims4("oracle").unwrap();
    let (hp, wp) = (h / 2, w / 2);
    let h_up = upsample(prev_hidden.data(), hp, wp, 2);
    let y_up = upsample(prev_pred.data(), hp, wp, 2);
    // z = [H↑, F] along channels
    let mut z = h_up.clone();
    z.extend_from_slice(feature.data());
    let pre = |conv2d: &rflcd_core::nn::Conv2d<f64>| {
        let b = conv2d.bias().unwrap().value().data().to_vec();
        conv(&z, 1 + c, h, w, conv2d.weight().value(), &b, 1, 1)
    };
    let gi = pre(&cell.input_gate);
    let gf = pre(&cell.forget_gate);
    let go = pre(&cell.output_gate);
    let cand = pre(&cell.candidate);
    let mut prediction = vec![0.0; h * w];
    let mut hidden = vec![0.0; h * w];
    for p in 0..h * w {
        prediction[p] = sigmoid(gf[p]) * y_up[p] + sigmoid(gi[p]) * cand[p].tanh();
        hidden[p] = sigmoid(go[p]) * prediction[p].tanh();
    }
    CellOracle { prediction, hidden }
}

pub fn ce_oracle(p: &[f64], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let w_plus = y.iter().filter(|&&v| v == 1.0).count() as f64 / n;
    let w_minus = 1.0 - w_plus;
    let mut loss = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        let pc = pi.clamp(1e-7, 1.0 - 1e-7);
        if yi == 1.0 {
            loss -= w_minus * pc.ln();
        } else {
            loss -= w_plus * (1.0 - pc).ln();
        }
    }
    loss
}

pub fn dice_oracle(p: &[f64], y: &[f64]) -> f64 {
    let (mut inter, mut sp, mut sy) = (0.0, 0.0, 0.0);
    for (&pi, &yi) in p.iter().zip(y) {
        inter += pi * yi;
        sp += pi;
        sy += yi;
    }
    1.0 - (2.0 * inter + 1e-7) / (sp + sy + 1e-7)
}

pub fn convolution_matches_direct_loops() {
    let mut g = rng(11);
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2), (1, 2, 5)] {
        let (n, c, h, w, o) = (2, 3, 9, 7, 4);
        let x = uniform(&mut g, &[n, c, h, w], -1.0, 1.0);
        let weight = uniform(&mut g, &[o, c, k, k], -1.0, 1.0);
        let bias = uniform(&mut g, &[o], -1.0, 1.0);
        let mut t = Tape::new();
        let (xv, wv, bv) = (t.constant(x.clone()), t.constant(weight.clone()), t.constant(bias.clone()));
        let y = t.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        let got = t.value(y).data();
        let per = got.len() / n;
        for s in 0..n {
            let xs = &x.data()[s * c * h * w..(s + 1) * c * h * w];
            let want = conv(xs, c, h, w, &weight, bias.data(), stride, pad);
            assert_close(&got[s * per..(s + 1) * per], &want, 1e-12, &format!("conv s{stride} p{pad} k{k}"));
        }
    }
}

pub fn upsampling_matches_direct_loops() {
    let mut g = rng(12);
    for f in [2, 4, 8] {
        let x = uniform(&mut g, &[1, 2, 3, 5], -1.0, 1.0);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let y = t.upsample_bilinear(xv, f).unwrap();
        for c in 0..2 {
            let want = upsample(x.plane(0, c), 3, 5, f);
            assert_close(t.value(y).plane(0, c), &want, 1e-14, &format!("upsample x{f}"));
        }
    }
}

pub fn c2fg_cell_matches_stepwise_evaluation(instances: usize) {
    let mut g = rng(13);
    for trial in 0..instances {
        let c = g.random_range(1..5);
        let (h, w) = (2 * g.random_range(1..5), 2 * g.random_range(1..5));
        let mut cell = C2fgCell::<f64>::new(&mut ParamRegistry::new(), 0, c);
        cell.visit_mut(&mut |p| {
            let shape = p.value().shape().to_vec();
            *p.value_mut() = Tensor::from_fn(&shape, |_| g.random_range(-1.0..1.0));
        });
        let feature = uniform(&mut g, &[1, c, h, w], -2.0, 2.0);
        let prev_hidden = uniform(&mut g, &[1, 1, h / 2, w / 2], -1.0, 1.0);
        let prev_pred = uniform(&mut g, &[1, 1, h / 2, w / 2], -4.0, 4.0);

        let mut t = Tape::new();
        let (fv, hv, yv) = (
            t.constant(feature.clone()),
            t.constant(prev_hidden.clone()),
            t.constant(prev_pred.clone()),
        );
        let trace = cell.forward(&mut t, fv, hv, yv).unwrap();
        let want = cell_oracle(&cell, &feature, &prev_hidden, &prev_pred);
        assert_close(t.value(trace.prediction).data(), &want.prediction, 1e-6, &format!("prediction #{trial}"));
        assert_close(t.value(trace.hidden).data(), &want.hidden, 1e-6, &format!("hidden #{trial}"));
    }
}

pub fn zero_weight_cell_halves_the_upsampled_prediction() {
    let mut g = rng(14);
    for _ in 0..20 {
        let cell = C2fgCell::<f64>::new(&mut ParamRegistry::new(), 1, 3);
        assert!(cell.params().iter().all(|p| p.value().data().iter().all(|&v| v == 0.0)));
        let feature = uniform(&mut g, &[2, 3, 8, 8], -2.0, 2.0);
        let prev_hidden = uniform(&mut g, &[2, 1, 4, 4], -1.0, 1.0);
        let prev_pred = uniform(&mut g, &[2, 1, 4, 4], -4.0, 4.0);
        let mut t = Tape::new();
        let (fv, hv, yv) = (t.constant(feature), t.constant(prev_hidden), t.constant(prev_pred));
        let trace = cell.forward(&mut t, fv, hv, yv).unwrap();
        let up = t.upsample_bilinear2(yv).unwrap();
        let half: Vec<f64> = t.value(up).data().iter().map(|v| 0.5 * v).collect();
        assert_eq!(t.value(trace.prediction).data(), &half[..]);
    }
}

pub fn losses_match_scalar_loops(instances: usize) {
    let mut g = rng(15);
    for trial in 0..instances {
        let (h, w) = (g.random_range(1..9), g.random_range(1..9));
        let p = uniform(&mut g, &[1, 1, h, w], 0.0, 1.0);
        let density = g.random_range(0.0..1.0);
        let y = binary(&mut g, &[1, 1, h, w], density);
        let mut t = Tape::new();
        let pv = t.constant(p.clone());
        let ce = weighted_ce(&mut t, pv, &y).unwrap();
        let dice = dice_loss(&mut t, pv, &y).unwrap();
        let (ce, dice) = (t.value(ce).item(), t.value(dice).item());
        let (want_ce, want_dice) = (ce_oracle(p.data(), y.data()), dice_oracle(p.data(), y.data()));
        assert!((ce - want_ce).abs() <= 1e-7, "weighted_ce #{trial}: {ce} vs {want_ce}");
        assert!((dice - want_dice).abs() <= 1e-7, "dice #{trial}: {dice} vs {want_dice}");
    }
}

pub fn hand_derived_cross_entropy() {
    let p = Tensor::full(&[1, 1, 2, 2], 0.5);
    let y = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let mut t = Tape::new();
    let pv = t.constant(p.clone());
    let ce = weighted_ce(&mut t, pv, &y).unwrap();
    let want = 1.5 * std::f64::consts::LN_2;
    assert!((t.value(ce).item() - want).abs() < 1e-12);
    assert!((ce_oracle(p.data(), y.data()) - want).abs() < 1e-12);
}

pub fn model_scale_at_width_48() {
    let full = RflCdNet::<f32>::zeroed(ModelConfig::full(48)).unwrap();
    let baseline = RflCdNet::<f32>::zeroed(ModelConfig::baseline(48)).unwrap();
    let total = param_count(&full);
    assert!((total as f64 - 27.24e6).abs() <= 0.2 * 27.24e6, "total {total}");
    let report = full.cost_report(1, 64, 64);
    assert_eq!(report.iter().map(|c| c.params).sum::<usize>(), total);
    let backbone = report.iter().find(|c| c.name == "backbone").unwrap().params;
    let overhead = total - param_count(&baseline);
    assert!(overhead as f64 <= 0.02 * backbone as f64, "overhead {overhead} of {backbone}");
}
