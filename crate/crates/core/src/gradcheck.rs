//! Central finite-difference verification of tape gradients, in `f64`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of a successful gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Element at which `max_rel_err` occurred.
    pub worst_index: usize,
    pub analytic: Tensor<f64>,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<F>(f: &mut F, x: &Tensor<f64>) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), false);
    let out = f(&mut tape, v)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(Error::NotScalar(value.shape().to_vec()));
    }
    let y = value.item();
    if !y.is_finite() {
        return Err(Error::Domain {
            op: "grad_check",
            detail: alloc::format!("f(x) = {y}"),
        });
    }
    Ok(y)
}

/// Analytic gradient of `f` at `x` via the tape.
pub fn analytic_grad<F>(f: &mut F, x: &Tensor<f64>) -> Result<Tensor<f64>>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let out = f(&mut tape, v)?;
    let y = tape.value(out).item();
    if !y.is_finite() {
        return Err(Error::Domain {
            op: "grad_check",
            detail: alloc::format!("f(x) = {y}"),
        });
    }
    tape.backward(out)?;
    Ok(tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
}

/// Compares the tape gradient of the scalar function `f` at `x` with central
/// differences of step `h` on every element.
///
/// The relative error per element is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`; an error is
/// returned when its maximum exceeds `tol`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64, tol: f64) -> Result<GradCheck>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_at(f, x, h, tol, &all)
}

/// [`grad_check`] restricted to the listed element indices.
pub fn grad_check_at<F>(f: F, x: &Tensor<f64>, h: f64, tol: f64, indices: &[usize]) -> Result<GradCheck>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_steps(f, x, &[h], tol, indices)
}

/// Like [`grad_check_at`], but estimates each numeric derivative from
/// several step sizes and keeps the most stable one.
///
/// `steps` must be decreasing. For every pair of neighbouring steps the
/// disagreement of their central differences estimates the truncation error,
/// and `ROUNDING_ULPS · ε · |f| / h` bounds the rounding error of the smaller
/// step. The smaller step of the pair with the least combined error is used,
/// so each element gets a suitable step without consulting the analytic
/// gradient. Steps stop early once three in a row agree to a tenth of `tol`.
pub fn grad_check_steps<F>(mut f: F, x: &Tensor<f64>, steps: &[f64], tol: f64, indices: &[usize]) -> Result<GradCheck>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    if steps.is_empty() || steps.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::Invalid("grad_check needs positive step sizes".into()));
    }
    let analytic = analytic_grad(&mut f, x)?;
    let noise = ROUNDING_ULPS * f64::EPSILON * eval(&mut f, x)?.abs().max(1.0);
    let mut probe = x.clone();
    let mut max_rel_err = 0.0;
    let mut worst_index = 0;
    let mut estimates = Vec::with_capacity(steps.len());
    for &i in indices {
        estimates.clear();
        let orig = probe.data()[i];
        for &h in steps {
            probe.data_mut()[i] = orig + h;
            let plus = eval(&mut f, &probe)?;
            probe.data_mut()[i] = orig - h;
            let minus = eval(&mut f, &probe)?;
            estimates.push(((plus - minus) / (2.0 * h), noise / h));
            if let [.., a, b, c] = estimates[..] {
                let close = 0.1 * tol * c.0.abs();
                if pair_error(a, b) <= close && pair_error(b, c) <= close {
                    break;
                }
            }
        }
        probe.data_mut()[i] = orig;
        let numeric = most_stable(&estimates);
        let err = rel_err(analytic.data()[i], numeric);
        if err > max_rel_err || err.is_nan() {
            max_rel_err = err;
            worst_index = i;
        }
    }
    if !(max_rel_err <= tol) {
        return Err(Error::GradCheck {
            max_rel_err,
            index: worst_index,
            tol,
        });
    }
    Ok(GradCheck {
        max_rel_err,
        worst_index,
        analytic,
    })
}

/// Scalar outputs here are long sums, so their rounding error is taken to be
/// a few hundred ulps rather than one.
const ROUNDING_ULPS: f64 = 256.0;

fn pair_error(coarse: (f64, f64), fine: (f64, f64)) -> f64 {
    (coarse.0 - fine.0).abs() + fine.1
}

/// Picks among `(estimate, rounding bound)` pairs ordered by decreasing step.
fn most_stable(estimates: &[(f64, f64)]) -> f64 {
    estimates
        .windows(2)
        .min_by(|a, b| pair_error(a[0], a[1]).total_cmp(&pair_error(b[0], b[1])))
        .map_or(estimates[0].0, |w| w[1].0)
}
