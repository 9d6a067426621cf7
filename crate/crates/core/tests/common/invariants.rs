//! Fusion invariants on one seeded random instance. Each check returns a
//! description of the first violation.

use rand::Rng;
use rflcd_core::model::{fuse, FusionStrategy};
use rflcd_core::{Tape, Tensor, Var};

use super::{rng, uniform};

fn split(t: &mut Tape<f64>, v: Var, stages: usize) -> Vec<Var> {
    (0..stages).map(|s| t.slice(v, 1, s, 1).unwrap()).collect()
}

/// Side logits and confidences of shape `[n, stages, h, w]`.
fn fusion_inputs(seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut g = rng(seed);
    let shape = [g.random_range(1..3), g.random_range(2..5), g.random_range(1..6), g.random_range(1..6)];
    (uniform(&mut g, &shape, -8.0, 8.0), uniform(&mut g, &shape, -30.0, 30.0))
}

/// Weights sum to one per pixel within 1e-6 and the fused probability lies
/// within the per-pixel range of the side probabilities, for every strategy.
pub fn weights_sum_to_one_and_bound_the_output(seed: u64) -> Result<(), String> {
    let (logits, conf) = fusion_inputs(seed);
    let [n, stages, h, w] = logits.dims4("test").unwrap();
    for strategy in FusionStrategy::ALL {
        let mut t = Tape::new();
        let (lv, cv) = (t.constant(logits.clone()), t.constant(conf.clone()));
        let (ls, cs) = (split(&mut t, lv, stages), split(&mut t, cv, stages));
        let fusion = fuse(&mut t, &ls, &cs, strategy).unwrap();
        let weights = t.value(fusion.weights);
        let fused = t.value(fusion.fused);
        let per_pixel = weights.shape()[2] * weights.shape()[3];
        for b in 0..n {
            for p in 0..per_pixel {
                let sum: f64 = (0..stages).map(|s| weights.data()[(b * stages + s) * per_pixel + p]).sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(format!("{strategy}: weights sum to {sum}"));
                }
            }
            for p in 0..h * w {
                let probs: Vec<f64> = (0..stages)
                    .map(|s| 1.0 / (1.0 + (-logits.data()[(b * stages + s) * h * w + p]).exp()))
                    .collect();
                let lo = probs.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = fused.data()[b * h * w + p];
                if v < lo - 1e-12 || v > hi + 1e-12 {
                    return Err(format!("{strategy}: {v} outside [{lo}, {hi}]"));
                }
            }
        }
    }
    Ok(())
}

/// Adding a per-pixel constant to every confidence leaves the max-fusion
/// selection and output unchanged.
pub fn max_selection_ignores_per_pixel_shifts(seed: u64) -> Result<(), String> {
    let mut g = rng(seed);
    let [n, stages, h, w] = [g.random_range(1..3), g.random_range(2..5), g.random_range(1..6), g.random_range(1..6)];
    // values on a coarse binary grid, so adding a shift is exact and
    // cannot merge distinct confidences
    let conf = Tensor::from_fn(&[n, stages, h, w], |_| g.random_range(-512..512) as f64 / 64.0);
    let shifts: Vec<f64> = (0..n * h * w).map(|_| g.random_range(-4096..4096) as f64 / 64.0).collect();
    let shifted = Tensor::from_fn(&[n, stages, h, w], |i| {
        let (b, p) = (i / (stages * h * w), i % (h * w));
        conf.data()[i] + shifts[b * h * w + p]
    });
    let logits = uniform(&mut g, &[n, stages, h, w], -4.0, 4.0);
    let selection = |c: &Tensor<f64>| {
        let mut t = Tape::new();
        let (lv, cv) = (t.constant(logits.clone()), t.constant(c.clone()));
        let (ls, cs) = (split(&mut t, lv, stages), split(&mut t, cv, stages));
        let fusion = fuse(&mut t, &ls, &cs, FusionStrategy::Max).unwrap();
        (t.value(fusion.weights).clone(), t.value(fusion.fused).clone())
    };
    if selection(&conf) != selection(&shifted) {
        return Err("max fusion changed under a per-pixel shift".into());
    }
    Ok(())
}
