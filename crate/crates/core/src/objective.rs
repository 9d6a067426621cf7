//! Class-balanced hybrid loss: weighted cross-entropy plus soft dice, summed
//! over the side predictions and the final map.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::STAGES;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Probabilities are clamped into `[CLAMP, 1 − CLAMP]` before the logarithm.
pub const CLAMP: f64 = 1e-7;
/// Smoothing term of the soft dice ratio.
pub const DICE_EPS: f64 = 1e-7;

/// Coefficients of the side losses (`λ_s`) and of the final loss (`μ`).
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub side: [f64; STAGES],
    pub fused: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            side: [0.25; STAGES],
            fused: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.side.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config(format!("side loss weights must be finite and non-negative, got {:?}", self.side)));
        }
        if !(self.fused > 0.0) || !self.fused.is_finite() {
            return Err(Error::Config(format!("final loss weight must be positive, got {}", self.fused)));
        }
        Ok(())
    }
}

/// Fractions of changed (`w_plus`) and unchanged (`w_minus`) pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassBalance {
    pub w_plus: f64,
    pub w_minus: f64,
}

impl ClassBalance {
    pub fn from_labels<T: Real>(y: &Tensor<T>) -> Result<Self> {
        let changed = check_labels("class_balance", y)?;
        let w_plus = changed as f64 / y.len() as f64;
        Ok(ClassBalance {
            w_plus,
            w_minus: 1.0 - w_plus,
        })
    }
}

/// Returns the number of ones after checking that `y` is a non-empty binary map.
fn check_labels<T: Real>(op: &'static str, y: &Tensor<T>) -> Result<usize> {
    if y.is_empty() {
        return Err(Error::InvalidShape {
            op,
            detail: "empty label map".into(),
        });
    }
    let mut ones = 0;
    for (i, &v) in y.data().iter().enumerate() {
        if v == T::one() {
            ones += 1;
        } else if v != T::zero() {
            return Err(Error::Domain {
                op,
                detail: format!("label value {v} at index {i} is not 0 or 1"),
            });
        }
    }
    Ok(ones)
}

fn check_pair<T: Real>(op: &'static str, tape: &Tape<T>, p: Var, y: &Tensor<T>) -> Result<()> {
    if tape.shape(p) != y.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: tape.shape(p).to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    Ok(())
}

/// `−w_minus·Σ_{y=1} ln p − w_plus·Σ_{y=0} ln(1 − p)`, summed over the batch,
/// with the class balance taken from `y`.
pub fn weighted_ce<T: Real>(tape: &mut Tape<T>, p: Var, y: &Tensor<T>) -> Result<Var> {
    check_pair("weighted_ce", tape, p, y)?;
    let balance = ClassBalance::from_labels(y)?;
    let pos = T::lit(-balance.w_minus);
    let neg = T::lit(-balance.w_plus);
    let coef_pos = tape.constant(y.map(|v| v * pos));
    let coef_neg = tape.constant(y.map(|v| (T::one() - v) * neg));
    let pc = tape.clamp(p, T::lit(CLAMP), T::lit(1.0 - CLAMP))?;
    let log_p = tape.ln(pc)?;
    let q = tape.rsub_scalar(T::one(), pc)?;
    let log_q = tape.ln(q)?;
    let a = tape.mul(coef_pos, log_p)?;
    let b = tape.mul(coef_neg, log_q)?;
    let terms = tape.add(a, b)?;
    tape.sum(terms)
}

/// `1 − (2·Σ p·y + ε) / (Σ p + Σ y + ε)`.
pub fn dice_loss<T: Real>(tape: &mut Tape<T>, p: Var, y: &Tensor<T>) -> Result<Var> {
    check_pair("dice_loss", tape, p, y)?;
    let ones = check_labels("dice_loss", y)?;
    let yc = tape.constant(y.clone());
    let py = tape.mul(p, yc)?;
    let inter = tape.sum(py)?;
    let num = tape.scale(inter, T::lit(2.0))?;
    let num = tape.add_scalar(num, T::lit(DICE_EPS))?;
    let mass = tape.sum(p)?;
    let den = tape.add_scalar(mass, T::lit(ones as f64 + DICE_EPS))?;
    let ratio = tape.div(num, den)?;
    tape.rsub_scalar(T::one(), ratio)
}

pub fn hybrid_loss<T: Real>(tape: &mut Tape<T>, p: Var, y: &Tensor<T>) -> Result<Var> {
    let ce = weighted_ce(tape, p, y)?;
    let dice = dice_loss(tape, p, y)?;
    tape.add(ce, dice)
}

/// The total loss and its unweighted components.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    /// `hybrid(p^s, y)` for every supervised stage.
    pub side: [Option<Var>; STAGES],
    pub fused: Var,
}

/// `Σ_s λ_s·hybrid(p^s, y) + μ·hybrid(p, y)` over the stages in `supervised`.
///
/// `side_probs[s]` must be present, at label resolution, for every supervised
/// stage.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    side_probs: &[Option<Var>; STAGES],
    supervised: &[usize],
    fused: Var,
    y: &Tensor<T>,
    weights: &LossWeights,
) -> Result<LossTerms> {
    weights.validate()?;
    let missing: Vec<usize> = supervised.iter().copied().filter(|&s| side_probs.get(s).copied().flatten().is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::Invalid(format!(
            "side predictions missing for stages {missing:?}; expected stages {supervised:?}"
        )));
    }
    let fused_loss = hybrid_loss(tape, fused, y)?;
    let mut total = tape.scale(fused_loss, T::lit(weights.fused))?;
    let mut side = [None; STAGES];
    for &s in supervised {
        let p = side_probs[s].expect("checked above");
        let h = hybrid_loss(tape, p, y)?;
        let weighted = tape.scale(h, T::lit(weights.side[s]))?;
        total = tape.add(total, weighted)?;
        side[s] = Some(h);
    }
    Ok(LossTerms {
        total,
        side,
        fused: fused_loss,
    })
}
