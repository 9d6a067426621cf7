//! Coarse-to-fine guiding cascade.
//!
//! Each cell refines the side prediction of the next coarser stage with the
//! current stage's feature, LSTM style:
//!
//! ```text
//! z    = [H^{s+1}↑, F^s]
//! g_k  = σ(W_k ∗ z + b_k)                    k ∈ {i, f, o}
//! Ŷ^s  = g_f ⊗ Ŷ^{s+1}↑ + g_i ⊗ tanh(W_c ∗ z + b_c)
//! H^s  = g_o ⊗ tanh(Ŷ^s)
//! ```
//!
//! `↑` is ×2 bilinear upsampling. Gates, hidden states and predictions all
//! have one channel; every `Ŷ^s` is a logit.

use alloc::format;
use alloc::vec::Vec;

use super::config::HiddenInit;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Module, Param, ParamRegistry};
use crate::real::Real;
use crate::tape::{Tape, Var};

/// Gate and candidate convolutions of one cell (3×3, padding 1,
/// `1 + C_s → 1`).
#[derive(Clone, Debug)]
pub struct C2fgCell<T> {
    pub input_gate: Conv2d<T>,
    pub forget_gate: Conv2d<T>,
    pub output_gate: Conv2d<T>,
    pub candidate: Conv2d<T>,
}

/// Intermediate maps of one cell evaluation.
#[derive(Clone, Copy, Debug)]
pub struct CellTrace {
    pub input_gate: Var,
    pub forget_gate: Var,
    pub output_gate: Var,
    pub candidate: Var,
    pub prediction: Var,
    pub hidden: Var,
}

impl<T: Real> C2fgCell<T> {
    pub fn new(reg: &mut ParamRegistry, stage: usize, feature_channels: usize) -> Self {
        let conv = |reg: &mut ParamRegistry, gate: &str| {
            Conv2d::same(reg, &format!("c2fg.{stage}.{gate}"), 1 + feature_channels, 1, 3, true)
        };
        C2fgCell {
            input_gate: conv(reg, "input_gate"),
            forget_gate: conv(reg, "forget_gate"),
            output_gate: conv(reg, "output_gate"),
            candidate: conv(reg, "candidate"),
        }
    }

    pub fn convs(&self) -> [&Conv2d<T>; 4] {
        [&self.input_gate, &self.forget_gate, &self.output_gate, &self.candidate]
    }

    pub fn convs_mut(&mut self) -> [&mut Conv2d<T>; 4] {
        [&mut self.input_gate, &mut self.forget_gate, &mut self.output_gate, &mut self.candidate]
    }

    /// One refinement step from stage `s + 1` to stage `s`.
    pub fn forward(&self, tape: &mut Tape<T>, feature: Var, prev_hidden: Var, prev_pred: Var) -> Result<CellTrace> {
        let h_up = tape.upsample_bilinear2(prev_hidden)?;
        let y_up = tape.upsample_bilinear2(prev_pred)?;
        let (fs, hs) = (tape.shape(feature), tape.shape(h_up));
        if fs.len() != 4 || fs[0] != hs[0] || fs[2..] != hs[2..] || tape.shape(y_up) != hs {
            return Err(Error::ShapeMismatch {
                op: "c2fg_cell",
                lhs: fs.to_vec(),
                rhs: hs.to_vec(),
            });
        }
        let z = tape.concat(&[h_up, feature], 1)?;
        // the four 1-channel convolutions share their input, so run them as
        // one 4-channel convolution
        let convs = self.convs();
        let weights: Vec<Var> = convs.iter().map(|c| tape.param(c.weight())).collect();
        let biases: Vec<Var> = convs
            .iter()
            .map(|c| tape.param(c.bias().expect("cell convolutions have biases")))
            .collect();
        let w = tape.concat(&weights, 0)?;
        let b = tape.concat(&biases, 0)?;
        let pre = tape.conv2d(z, w, Some(b), 1, 1)?;
        let mut channel = |k: usize| tape.slice(pre, 1, k, 1);
        let (pi, pf, po, pc) = (channel(0)?, channel(1)?, channel(2)?, channel(3)?);
        let input_gate = tape.sigmoid(pi)?;
        let forget_gate = tape.sigmoid(pf)?;
        let output_gate = tape.sigmoid(po)?;
        let candidate = tape.tanh(pc)?;
        let (prediction, hidden) = cell_update(tape, input_gate, forget_gate, output_gate, candidate, y_up)?;
        Ok(CellTrace {
            input_gate,
            forget_gate,
            output_gate,
            candidate,
            prediction,
            hidden,
        })
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.convs().iter().map(|c| c.macs(n, h, w)).sum()
    }
}

/// `Ŷ = g_f ⊗ Ŷ_prev↑ + g_i ⊗ candidate`, `H = g_o ⊗ tanh(Ŷ)`.
pub fn cell_update<T: Real>(
    tape: &mut Tape<T>,
    input_gate: Var,
    forget_gate: Var,
    output_gate: Var,
    candidate: Var,
    prev_pred_up: Var,
) -> Result<(Var, Var)> {
    let kept = tape.mul(forget_gate, prev_pred_up)?;
    let added = tape.mul(input_gate, candidate)?;
    let prediction = tape.add(kept, added)?;
    let squashed = tape.tanh(prediction)?;
    let hidden = tape.mul(output_gate, squashed)?;
    Ok((prediction, hidden))
}

impl<T: Real> Module<T> for C2fgCell<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for c in self.convs() {
            c.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for c in self.convs_mut() {
            c.visit_mut(f);
        }
    }
}

/// Predictions and hidden states of a cascade run, indexed by stage.
#[derive(Clone, Debug, Default)]
pub struct CascadeOutput {
    pub predictions: Vec<(usize, Var)>,
    pub hidden: Vec<(usize, Var)>,
}

impl CascadeOutput {
    pub fn prediction(&self, stage: usize) -> Option<Var> {
        self.predictions.iter().find(|(s, _)| *s == stage).map(|&(_, v)| v)
    }

    pub fn hidden(&self, stage: usize) -> Option<Var> {
        self.hidden.iter().find(|(s, _)| *s == stage).map(|&(_, v)| v)
    }
}

/// Runs the cascade from the raw prediction at stage `top` down to stage 0.
///
/// `features[s]` is `F^s` for `s < top`, and `cells[s]` the cell of stage `s`.
/// Features must be ordered by stage; a mis-ordered feature fails the
/// resolution check of its cell.
pub fn c2fg_run<T: Real>(
    tape: &mut Tape<T>,
    cells: &[&C2fgCell<T>],
    features: &[Var],
    top: usize,
    top_prediction: Var,
    init: HiddenInit,
) -> Result<CascadeOutput> {
    if cells.len() < top || features.len() < top {
        return Err(Error::Invalid(format!(
            "cascade from stage {top} needs {top} cells and features, got {} and {}",
            cells.len(),
            features.len()
        )));
    }
    let hidden = match init {
        HiddenInit::Tanh => tape.tanh(top_prediction)?,
        HiddenInit::Verbatim => top_prediction,
    };
    let mut out = CascadeOutput {
        predictions: alloc::vec![(top, top_prediction)],
        hidden: alloc::vec![(top, hidden)],
    };
    let (mut h, mut y) = (hidden, top_prediction);
    for s in (0..top).rev() {
        let trace = cells[s].forward(tape, features[s], h, y)?;
        h = trace.hidden;
        y = trace.prediction;
        out.predictions.push((s, y));
        out.hidden.push((s, h));
    }
    Ok(out)
}
