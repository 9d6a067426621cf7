//! Pixel confusion counts and precision / recall / F1.

use core::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// Precision, recall and F1 in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `2PR / (P + R)`, or 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Accumulates a binary prediction against binary labels. Any nonzero
    /// prediction counts as changed.
    pub fn update<T: Real>(&mut self, pred: &Tensor<T>, y: &Tensor<T>) -> Result<()> {
        self.update_thresholded(pred, y, 0.0, true)
    }

    /// Accumulates `p > threshold` against binary labels.
    pub fn update_probs<T: Real>(&mut self, probs: &Tensor<T>, y: &Tensor<T>, threshold: f64) -> Result<()> {
        self.update_thresholded(probs, y, threshold, false)
    }

    fn update_thresholded<T: Real>(&mut self, p: &Tensor<T>, y: &Tensor<T>, threshold: f64, nonzero: bool) -> Result<()> {
        if p.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                op: "update_confusion",
                lhs: p.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let t = T::lit(threshold);
        for (&pv, &yv) in p.data().iter().zip(y.data()) {
            let predicted = if nonzero { pv != T::zero() } else { pv > t };
            match (predicted, yv != T::zero()) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        *self += *other;
    }

    /// Each ratio is 0 when its denominator is 0.
    pub fn prf1(&self) -> Prf1 {
        let precision = ratio(self.tp as f64, (self.tp + self.fp) as f64);
        let recall = ratio(self.tp as f64, (self.tp + self.fn_) as f64);
        Prf1 {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}
