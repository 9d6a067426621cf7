#![allow(dead_code)]

pub mod grad_suite;
pub mod invariants;
pub mod oracle;
pub mod reported;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rflcd_core::nn::{Module, Param, ParamId};
use rflcd_core::{Real, Result, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

pub fn binary(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
}

/// `Σ out ⊙ R` for a fixed pseudo-random `R`, so every output element
/// contributes with a distinct weight.
pub fn project<T: Real>(tape: &mut Tape<T>, out: Var, seed: u64) -> Result<Var> {
    let mut r = rng(seed);
    let weights = Tensor::from_fn(tape.shape(out), |_| T::lit(r.random_range(-1.0..1.0)));
    let w = tape.constant(weights);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

pub fn find<'a, T: Real, M: Module<T>>(m: &'a M, name: &str) -> &'a Param<T> {
    m.params()
        .into_iter()
        .find(|p| p.name() == name)
        .unwrap_or_else(|| panic!("no parameter named {name}"))
}

pub fn trainable<T: Real, M: Module<T>>(m: &M) -> Vec<(ParamId, String, Tensor<T>)> {
    m.params()
        .into_iter()
        .filter(|p| p.is_trainable())
        .map(|p| (p.id(), p.name().to_string(), p.value().clone()))
        .collect()
}

/// Evenly spread sample of `count` indices below `len`.
pub fn spread(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    (0..count).map(|i| i * len / count + (i * 7) % (len / count).max(1)).collect()
}
