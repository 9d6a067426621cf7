//! Learnable pixel-wise fusion of side predictions.

use alloc::format;
use alloc::vec::Vec;

use super::backbone::stage_channels;
use super::config::{FusionStrategy, ModelConfig, STAGES};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Module, Param, ParamRegistry};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One 1×1 convolution per stage, mapping `F^s` to a confidence map `C^s`.
#[derive(Clone, Debug)]
pub struct ConfidenceHeads<T> {
    heads: Vec<Conv2d<T>>,
}

impl<T: Real> ConfidenceHeads<T> {
    pub fn new(reg: &mut ParamRegistry, cfg: &ModelConfig) -> Self {
        let heads = (0..STAGES)
            .map(|s| Conv2d::new(reg, &format!("lf.confidence.{s}"), stage_channels(cfg, s), 1, 1, 1, 0, true))
            .collect();
        ConfidenceHeads { heads }
    }

    pub fn heads(&self) -> &[Conv2d<T>] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [Conv2d<T>] {
        &mut self.heads
    }

    /// `C^s` for every stage, upsampled to the resolution of `F^0`.
    pub fn confidences(&self, tape: &mut Tape<T>, features: &[Var]) -> Result<Vec<Var>> {
        if features.len() != self.heads.len() {
            return Err(Error::Invalid(format!(
                "{} confidence heads but {} stage features",
                self.heads.len(),
                features.len()
            )));
        }
        features
            .iter()
            .zip(&self.heads)
            .enumerate()
            .map(|(s, (&f, head))| {
                let c = head.forward(tape, f)?;
                tape.upsample_bilinear(c, 1 << s)
            })
            .collect()
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.heads.iter().enumerate().map(|(s, c)| c.macs(n, h >> s, w >> s)).sum()
    }
}

impl<T: Real> Module<T> for ConfidenceHeads<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.heads.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.heads.visit_mut(f);
    }
}

/// Fused probability map and the per-stage weights that produced it.
#[derive(Clone, Copy, Debug)]
pub struct Fusion {
    /// `[N, 1, H, W]` probabilities.
    pub fused: Var,
    /// `[N, S, H, W]` (or `[N, S, 1, 1]` for the global strategy) weights.
    pub weights: Var,
}

/// Weighted combination of side probabilities `p^s = σ(Ŷ^s)`.
///
/// All inputs are `[N, 1, H, W]` at the same resolution. Weights sum to one
/// over the stage axis for every strategy, so the result stays inside the
/// per-pixel range of the side probabilities.
pub fn fuse<T: Real>(tape: &mut Tape<T>, logits: &[Var], confidences: &[Var], strategy: FusionStrategy) -> Result<Fusion> {
    if logits.is_empty() || logits.len() != confidences.len() {
        return Err(Error::Invalid(format!(
            "fusion needs one confidence map per side prediction, got {} and {}",
            logits.len(),
            confidences.len()
        )));
    }
    let stacked = tape.concat(logits, 1)?;
    let probs = tape.sigmoid(stacked)?;
    let conf = tape.concat(confidences, 1)?;
    if tape.shape(conf) != tape.shape(probs) {
        return Err(Error::ShapeMismatch {
            op: "fuse",
            lhs: tape.shape(probs).to_vec(),
            rhs: tape.shape(conf).to_vec(),
        });
    }
    let weights = match strategy {
        FusionStrategy::Softmax => tape.softmax(conf, 1)?,
        FusionStrategy::Max => {
            let mask = argmax_mask(tape.value(conf));
            tape.constant(mask)
        }
        FusionStrategy::Global => {
            let pooled = tape.global_avg_pool(conf)?;
            tape.softmax(pooled, 1)?
        }
    };
    let weighted = tape.mul(weights, probs)?;
    let fused = tape.sum_axis(weighted, 1)?;
    Ok(Fusion { fused, weights })
}

/// One-hot over axis 1 of the largest entry; ties go to the lowest index.
fn argmax_mask<T: Real>(conf: &Tensor<T>) -> Tensor<T> {
    let s = conf.shape();
    let (n, stages, plane) = (s[0], s[1], s[2] * s[3]);
    let d = conf.data();
    let mut mask = Tensor::zeros(s);
    let md = mask.data_mut();
    for b in 0..n {
        let base = b * stages * plane;
        for p in 0..plane {
            let mut best = 0;
            for k in 1..stages {
                if d[base + k * plane + p] > d[base + best * plane + p] {
                    best = k;
                }
            }
            md[base + best * plane + p] = T::one();
        }
    }
    mask
}
