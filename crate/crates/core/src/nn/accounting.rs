use super::{Conv2d, Module};
use crate::real::Real;

/// Number of trainable scalars in a layer tree.
pub fn param_count<T: Real, M: Module<T> + ?Sized>(module: &M) -> usize {
    let mut total = 0;
    module.visit(&mut |p| {
        if p.is_trainable() {
            total += p.value().len();
        }
    });
    total
}

/// Multiply-accumulate estimate of convolutions applied in sequence to an
/// `[N, C, H, W]` input. Normalizations and activations are not counted.
pub fn conv_chain_macs<T: Real>(layers: &[&Conv2d<T>], input: [usize; 4]) -> u64 {
    let [n, _, mut h, mut w] = input;
    let mut total = 0;
    for layer in layers {
        total += layer.macs(n, h, w);
        (h, w) = layer.output_hw(h, w).unwrap_or((0, 0));
    }
    total
}
