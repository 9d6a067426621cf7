use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Conv2d;
use crate::real::Real;
use crate::tensor::Tensor;

/// Standard deviation of Kaiming-normal initialization for a fan-in.
pub fn kaiming_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// Kaiming-normal weights (`std = sqrt(2 / fan_in)`, `fan_in = in_ch·k·k`)
/// and zero bias, deterministic in `seed`.
pub fn kaiming_init<T: Real>(layer: &mut Conv2d<T>, seed: u64) {
    kaiming_fill(layer.weight_mut().value_mut(), seed);
    if let Some(b) = layer.bias_mut() {
        b.value_mut().data_mut().fill(T::zero());
    }
}

/// Fills an `[out, in, kH, kW]` weight tensor from `N(0, 2 / (in·kH·kW))`.
pub fn kaiming_fill<T: Real>(weight: &mut Tensor<T>, seed: u64) {
    let fan_in: usize = weight.shape()[1..].iter().product();
    let normal = Normal::new(0.0f64, kaiming_std(fan_in)).expect("finite positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for w in weight.data_mut() {
        *w = T::lit(normal.sample(&mut rng));
    }
    debug_assert!(weight.data().iter().all(|w| Float::is_finite(*w)));
}
