//! Tape gradients against central finite differences, in f64. Each function
//! panics on the first mismatch.

use rflcd_core::gradcheck::{analytic_grad, grad_check, grad_check_steps};
use rflcd_core::model::{c2fg_run, fuse, C2fgCell, FusionStrategy, HiddenInit, ModelConfig, RflCdNet};
use rflcd_core::nn::{BatchNorm2d, ChannelAttention, Conv2d, Mode, Module, ParamRegistry};
use rflcd_core::objective::{dice_loss, hybrid_loss, total_loss, weighted_ce, LossWeights};
use rflcd_core::{Result, Tape, Tensor, Var};

use super::{binary, project, rng, spread, trainable, uniform};

const H: f64 = 1e-5;
/// The composed model is strongly curved in some weights (batch statistics
/// over a handful of values at the coarsest level) while other gradients are
/// small enough for rounding to dominate, so no single step suits every
/// element.
const MODEL_STEPS: [f64; 6] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7];
const PRIMITIVE_TOL: f64 = 1e-6;
const MODEL_TOL: f64 = 1e-4;

fn check_unary(name: &str, x: Tensor<f64>, op: impl Fn(&mut Tape<f64>, Var) -> Result<Var>) {
    let r = grad_check(|t, v| { let y = op(t, v)?; project(t, y, 99) }, &x, H, PRIMITIVE_TOL)
        .unwrap_or_else(|e| panic!("{name}: {e}"));
    assert!(r.max_rel_err < PRIMITIVE_TOL, "{name}: {}", r.max_rel_err);
}

pub fn elementwise_primitives() {
    let mut g = rng(1);
    let x = uniform(&mut g, &[2, 3, 4], -2.0, 2.0);
    let pos = uniform(&mut g, &[2, 3, 4], 0.2, 3.0);
    let other = uniform(&mut g, &[2, 3, 4], 0.5, 2.0);
    let row = uniform(&mut g, &[1, 3, 1], 0.5, 2.0);

    check_unary("scale", x.clone(), |t, v| t.scale(v, -1.7));
    check_unary("add_scalar", x.clone(), |t, v| t.add_scalar(v, 0.3));
    check_unary("rsub_scalar", x.clone(), |t, v| t.rsub_scalar(1.0, v));
    check_unary("ln", pos.clone(), |t, v| t.ln(v));
    check_unary("sigmoid", x.clone(), |t, v| t.sigmoid(v));
    check_unary("tanh", x.clone(), |t, v| t.tanh(v));
    check_unary("relu", x.clone(), |t, v| t.relu(v));
    check_unary("clamp", x.clone(), |t, v| t.clamp(v, -1.0, 1.0));
    for (name, o) in [("same shape", other.clone()), ("broadcast", row.clone())] {
        let c = o.clone();
        check_unary(&format!("add {name}"), x.clone(), move |t, v| { let k = t.constant(c.clone()); t.add(v, k) });
        let c = o.clone();
        check_unary(&format!("sub {name}"), x.clone(), move |t, v| { let k = t.constant(c.clone()); t.sub(k, v) });
        let c = o.clone();
        check_unary(&format!("mul {name}"), x.clone(), move |t, v| { let k = t.constant(c.clone()); t.mul(v, k) });
        let c = o.clone();
        check_unary(&format!("div num {name}"), x.clone(), move |t, v| { let k = t.constant(c.clone()); t.div(v, k) });
        let c = x.clone();
        check_unary(&format!("div den {name}"), o.clone(), move |t, v| { let k = t.constant(c.clone()); t.div(k, v) });
    }
    // broadcast operand receiving the gradient
    let big = x.clone();
    check_unary("mul broadcast operand", row, move |t, v| { let k = t.constant(big.clone()); t.mul(k, v) });
    check_unary("self product", x, |t, v| t.mul(v, v));
}

pub fn reductions_and_reshaping() {
    let mut g = rng(2);
    let x = uniform(&mut g, &[2, 3, 4, 2], -2.0, 2.0);
    let y = uniform(&mut g, &[2, 2, 4, 2], -2.0, 2.0);
    check_unary("sum", x.clone(), |t, v| { let s = t.sum(v)?; t.mul(s, s) });
    check_unary("mean", x.clone(), |t, v| { let s = t.mean(v)?; t.mul(s, s) });
    for axis in 0..4 {
        check_unary(&format!("sum_axis {axis}"), x.clone(), move |t, v| t.sum_axis(v, axis));
        check_unary(&format!("softmax {axis}"), x.clone(), move |t, v| t.softmax(v, axis));
    }
    let yc = y.clone();
    check_unary("concat", x.clone(), move |t, v| { let k = t.constant(yc.clone()); t.concat(&[k, v, k], 1) });
    check_unary("slice", x.clone(), |t, v| t.slice(v, 1, 1, 2));
    check_unary("reshape", x, |t, v| t.reshape(v, &[4, 12]));
}

pub fn spatial_primitives() {
    let mut g = rng(3);
    let x = uniform(&mut g, &[2, 3, 6, 6], -1.0, 1.0);
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2), (1, 2, 3)] {
        let w = uniform(&mut g, &[4, 3, k, k], -0.5, 0.5);
        let b = uniform(&mut g, &[4], -0.5, 0.5);
        let (wc, bc) = (w.clone(), b.clone());
        check_unary(&format!("conv2d x s{stride} p{pad} k{k}"), x.clone(), move |t, v| {
            let (w, b) = (t.constant(wc.clone()), t.constant(bc.clone()));
            t.conv2d(v, w, Some(b), stride, pad)
        });
        let (xc, bc) = (x.clone(), b.clone());
        check_unary(&format!("conv2d w s{stride} p{pad} k{k}"), w.clone(), move |t, v| {
            let (x, b) = (t.constant(xc.clone()), t.constant(bc.clone()));
            t.conv2d(x, v, Some(b), stride, pad)
        });
        let (xc, wc) = (x.clone(), w.clone());
        check_unary(&format!("conv2d b s{stride} p{pad} k{k}"), b, move |t, v| {
            let (x, w) = (t.constant(xc.clone()), t.constant(wc.clone()));
            t.conv2d(x, w, Some(v), stride, pad)
        });
    }
    check_unary("maxpool2", x.clone(), |t, v| t.maxpool2(v));
    check_unary("upsample x2", x.clone(), |t, v| t.upsample_bilinear(v, 2));
    check_unary("upsample x4", x.clone(), |t, v| t.upsample_bilinear(v, 4));
    check_unary("upsample x8", uniform(&mut g, &[1, 2, 2, 3], -1.0, 1.0), |t, v| t.upsample_bilinear(v, 8));
    check_unary("global_avg_pool", x.clone(), |t, v| t.global_avg_pool(v));
    check_unary("global_max_pool", x.clone(), |t, v| t.global_max_pool(v));

    let gamma = uniform(&mut g, &[3], 0.5, 1.5);
    let beta = uniform(&mut g, &[3], -0.5, 0.5);
    let (gc, bc) = (gamma.clone(), beta.clone());
    check_unary("batch_norm x", x.clone(), move |t, v| {
        let (g, b) = (t.constant(gc.clone()), t.constant(bc.clone()));
        Ok(t.batch_norm_train(v, g, b, 1e-5)?.0)
    });
    let (xc, bc) = (x.clone(), beta.clone());
    check_unary("batch_norm gamma", gamma.clone(), move |t, v| {
        let (x, b) = (t.constant(xc.clone()), t.constant(bc.clone()));
        Ok(t.batch_norm_train(x, v, b, 1e-5)?.0)
    });
    let (xc, gc) = (x, gamma);
    check_unary("batch_norm beta", beta, move |t, v| {
        let (x, g) = (t.constant(xc.clone()), t.constant(gc.clone()));
        Ok(t.batch_norm_train(x, g, v, 1e-5)?.0)
    });
}

/// Checks the gradient of `f` with respect to the input and to every
/// trainable parameter of `module`.
fn check_module<M: Module<f64>>(
    name: &str,
    module: &mut M,
    x: &Tensor<f64>,
    tol: f64,
    mut f: impl FnMut(&mut M, &mut Tape<f64>, Var) -> Result<Var>,
) {
    let r = grad_check(|t, v| { let y = f(module, t, v)?; project(t, y, 5) }, x, H, tol)
        .unwrap_or_else(|e| panic!("{name} input: {e}"));
    assert!(r.max_rel_err < tol);
    let xc = x.clone();
    for (id, pname, value) in trainable(module) {
        let check = grad_check(
            |t, v| {
                t.bind_param(id, v);
                let input = t.constant(xc.clone());
                let y = f(module, t, input)?;
                project(t, y, 5)
            },
            &value,
            H,
            tol,
        );
        check.unwrap_or_else(|e| panic!("{name} parameter {pname}: {e}"));
    }
}

fn randomize<M: Module<f64>>(m: &mut M, seed: u64, scale: f64) {
    let mut g = rng(seed);
    m.visit_mut(&mut |p| {
        if p.is_trainable() {
            let shape = p.value().shape().to_vec();
            let base = if p.name().ends_with("scale") { 1.0 } else { 0.0 };
            *p.value_mut() = Tensor::from_fn(&shape, |_| base + g_range(&mut g, scale));
        }
    });
}

fn g_range(g: &mut rand_chacha::ChaCha8Rng, scale: f64) -> f64 {
    use rand::Rng;
    g.random_range(-scale..scale)
}

pub fn layers() {
    let mut g = rng(4);
    let x = uniform(&mut g, &[2, 4, 4, 4], -1.0, 1.0);
    let mut reg = ParamRegistry::new();

    let mut conv = Conv2d::same(&mut reg, "conv", 4, 3, 3, true);
    randomize(&mut conv, 10, 0.5);
    check_module("conv", &mut conv, &x, PRIMITIVE_TOL, |m, t, v| m.forward(t, v));

    let mut bn = BatchNorm2d::new(&mut reg, "bn", 4);
    randomize(&mut bn, 11, 0.5);
    check_module("batch norm (train)", &mut bn, &x, PRIMITIVE_TOL, |m, t, v| m.forward(t, v, Mode::Train));
    check_module("batch norm (eval)", &mut bn, &x, PRIMITIVE_TOL, |m, t, v| m.forward(t, v, Mode::Eval));

    let mut ca = ChannelAttention::new(&mut reg, "ca", 4, 2);
    randomize(&mut ca, 12, 0.8);
    check_module("channel attention", &mut ca, &x, PRIMITIVE_TOL, |m, t, v| m.forward(t, v));
}

pub fn c2fg_cell_and_cascade() {
    let mut g = rng(5);
    let mut reg = ParamRegistry::new();
    let mut cell = C2fgCell::new(&mut reg, 0, 3);
    randomize(&mut cell, 13, 0.5);
    let feature = uniform(&mut g, &[2, 3, 8, 8], -1.0, 1.0);
    let hidden = uniform(&mut g, &[2, 1, 4, 4], -0.9, 0.9);
    let pred = uniform(&mut g, &[2, 1, 4, 4], -2.0, 2.0);
    let (h, p) = (hidden.clone(), pred.clone());
    check_module("c2fg cell / feature", &mut cell, &feature, PRIMITIVE_TOL, move |m, t, v| {
        let (h, p) = (t.constant(h.clone()), t.constant(p.clone()));
        let trace = m.forward(t, v, h, p)?;
        let both = t.concat(&[trace.prediction, trace.hidden], 1)?;
        Ok(both)
    });
    let f = feature.clone();
    check_module("c2fg cell / previous prediction", &mut cell, &pred, PRIMITIVE_TOL, move |m, t, v| {
        let (fv, hv) = (t.constant(f.clone()), t.tanh(v)?);
        Ok(m.forward(t, fv, hv, v)?.prediction)
    });

    // a two-cell cascade, differentiated through the starting prediction
    let mut upper = C2fgCell::new(&mut reg, 1, 2);
    randomize(&mut upper, 14, 0.5);
    let f0 = uniform(&mut g, &[1, 3, 8, 8], -1.0, 1.0);
    let f1 = uniform(&mut g, &[1, 2, 4, 4], -1.0, 1.0);
    let start = uniform(&mut g, &[1, 1, 2, 2], -2.0, 2.0);
    for init in [HiddenInit::Tanh, HiddenInit::Verbatim] {
        let r = grad_check(
            |t, v| {
                let (a, b) = (t.constant(f0.clone()), t.constant(f1.clone()));
                let out = c2fg_run(t, &[&cell, &upper], &[a, b], 2, v, init)?;
                let y = out.prediction(0).unwrap();
                project(t, y, 6)
            },
            &start,
            H,
            PRIMITIVE_TOL,
        );
        r.unwrap_or_else(|e| panic!("cascade {init:?}: {e}"));
    }
}

pub fn learnable_fusion() {
    let mut g = rng(6);
    let logits = uniform(&mut g, &[2, 4, 4, 4], -3.0, 3.0);
    let conf = uniform(&mut g, &[2, 4, 4, 4], -2.0, 2.0);
    for strategy in [FusionStrategy::Softmax, FusionStrategy::Global] {
        let split = |t: &mut Tape<f64>, v: Var| -> Result<Vec<Var>> { (0..4).map(|s| t.slice(v, 1, s, 1)).collect() };
        let c = conf.clone();
        check_unary(&format!("{strategy} / logits"), logits.clone(), move |t, v| {
            let l = split(t, v)?;
            let cv = t.constant(c.clone());
            let cs = split(t, cv)?;
            Ok(fuse(t, &l, &cs, strategy)?.fused)
        });
        let l = logits.clone();
        check_unary(&format!("{strategy} / confidences"), conf.clone(), move |t, v| {
            let cs = split(t, v)?;
            let lv = t.constant(l.clone());
            let ls = split(t, lv)?;
            Ok(fuse(t, &ls, &cs, strategy)?.fused)
        });
    }
}

pub fn losses() {
    let mut g = rng(7);
    for trial in 0..4 {
        let p = uniform(&mut g, &[1, 1, 4, 4], 0.05, 0.95);
        let y = binary(&mut g, &[1, 1, 4, 4], 0.3);
        for (name, f) in [
            ("weighted_ce", weighted_ce as fn(&mut Tape<f64>, Var, &Tensor<f64>) -> Result<Var>),
            ("dice_loss", dice_loss),
            ("hybrid_loss", hybrid_loss),
        ] {
            let yc = y.clone();
            grad_check(|t, v| f(t, v, &yc), &p, 1e-6, PRIMITIVE_TOL).unwrap_or_else(|e| panic!("{name} #{trial}: {e}"));
        }
    }
    let y = binary(&mut g, &[1, 1, 4, 4], 0.4);
    let p = uniform(&mut g, &[5, 1, 4, 4], 0.05, 0.95);
    grad_check(
        |t, v| {
            let maps: Vec<Var> = (0..5).map(|i| t.slice(v, 0, i, 1)).collect::<Result<_>>()?;
            let side = [Some(maps[0]), Some(maps[1]), Some(maps[2]), Some(maps[3])];
            Ok(total_loss(t, &side, &[0, 1, 2, 3], maps[4], &y, &LossWeights::default())?.total)
        },
        &p,
        1e-6,
        PRIMITIVE_TOL,
    )
    .unwrap();
}

fn central_difference(f: &mut impl FnMut(&mut Tape<f64>, Var) -> Result<Var>, x: &Tensor<f64>, i: usize, h: f64) -> f64 {
    let mut eval = |delta: f64| {
        let mut probe = x.clone();
        probe.data_mut()[i] += delta;
        let mut t = Tape::new();
        let v = t.leaf(probe, false);
        let out = f(&mut t, v).unwrap();
        t.value(out).item()
    };
    (eval(h) - eval(-h)) / (2.0 * h)
}

fn model_loss(net: &mut RflCdNet<f64>, t: &mut Tape<f64>, xa: Var, xb: Var, y: &Tensor<f64>) -> Result<Var> {
    let out = net.forward(t, xa, xb, Mode::Train)?;
    let stages: Vec<usize> = net.config().supervised_stages().collect();
    Ok(total_loss(t, &out.side_probs, &stages, out.fused, y, &LossWeights::default())?.total)
}

pub fn full_model_at_width_four(strategies: &[FusionStrategy]) {
    let mut g = rng(8);
    let xa = uniform(&mut g, &[2, 3, 16, 16], 0.0, 1.0);
    let xb = uniform(&mut g, &[2, 3, 16, 16], 0.0, 1.0);
    let y = binary(&mut g, &[2, 1, 16, 16], 0.25);
    for &strategy in strategies {
        let cfg = ModelConfig {
            fusion: strategy,
            ..ModelConfig::full(4)
        };
        let mut net = RflCdNet::<f64>::new(cfg, 21).unwrap();
        // non-zero biases so every path carries signal
        net.visit_mut(&mut |p| {
            if p.name().ends_with(".bias") || p.name().ends_with(".shift") {
                let shape = p.value().shape().to_vec();
                *p.value_mut() = Tensor::from_fn(&shape, |i| 0.05 * ((i % 5) as f64 - 2.0));
            }
        });

        let xbc = xb.clone();
        // the second strategy shares everything upstream of the fusion, so it
        // is probed more sparsely outside the fusion parameters
        let primary = strategy == FusionStrategy::Softmax;
        let probes = spread(xa.len(), if primary { 96 } else { 32 });
        let r = grad_check_steps(
            |t, v| {
                let b = t.constant(xbc.clone());
                model_loss(&mut net, t, v, b, &y)
            },
            &xa,
            &MODEL_STEPS,
            MODEL_TOL,
            &probes,
        )
        .unwrap_or_else(|e| panic!("{strategy} input A: {e}"));
        assert!(r.max_rel_err < MODEL_TOL);

        let params = trainable(&net);
        for (id, name, value) in params {
            let idx = spread(value.len(), if primary || name.starts_with("lf.") { 8 } else { 2 });
            let (a, b) = (xa.clone(), xb.clone());
            let mut f = |t: &mut Tape<f64>, v: Var| {
                t.bind_param(id, v);
                let (a, b) = (t.constant(a.clone()), t.constant(b.clone()));
                model_loss(&mut net, t, a, b, &y)
            };
            let backbone_bias = (name.starts_with("encoder.") || name.starts_with("decoder.")) && name.ends_with(".bias");
            if backbone_bias {
                // batch norm cancels any per-channel shift, so these gradients
                // are exactly zero and a relative error is meaningless
                let analytic = analytic_grad(&mut f, &value).unwrap();
                assert!(analytic.data().iter().all(|g| g.abs() < 1e-9), "{name}: {analytic:?}");
                for &i in &idx {
                    let numeric = central_difference(&mut f, &value, i, 1e-6);
                    assert!(numeric.abs() < 1e-5, "{name}[{i}]: numeric {numeric}");
                }
                continue;
            }
            grad_check_steps(f, &value, &MODEL_STEPS, MODEL_TOL, &idx)
                .unwrap_or_else(|e| panic!("{strategy} parameter {name}: {e}"));
        }
    }
}
