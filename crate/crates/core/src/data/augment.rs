use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::sample::BiTemporalSample;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Probability of a horizontal flip.
    pub flip_prob: f64,
    /// Draw a rotation from {0°, 90°, 180°, 270°}.
    pub rotate: bool,
    /// Standard deviation of the Gaussian noise added to both images.
    pub noise_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            rotate: true,
            noise_std: 0.02,
        }
    }
}

/// A horizontal flip (applied first) followed by `quarter_turns` clockwise
/// 90° rotations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Transform {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Transform {
    pub fn apply<T: Real>(self, t: &Tensor<T>) -> Tensor<T> {
        let flipped = if self.flip { hflip(t) } else { t.clone() };
        rot90(&flipped, self.quarter_turns)
    }
}

/// Mirrors every `[.., H, W]` plane left to right.
pub fn hflip<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let w = s[s.len() - 1];
    let src = t.data();
    Tensor::from_fn(s, |i| {
        let (row, x) = (i / w, i % w);
        src[row * w + (w - 1 - x)]
    })
}

/// Rotates every `[.., H, W]` plane clockwise by `k · 90°`.
pub fn rot90<T: Real>(t: &Tensor<T>, k: u8) -> Tensor<T> {
    let mut out = t.clone();
    for _ in 0..k % 4 {
        out = rot90_once(&out);
    }
    out
}

fn rot90_once<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let r = s.len();
    let (h, w) = (s[r - 2], s[r - 1]);
    let mut shape = s.to_vec();
    shape[r - 2] = w;
    shape[r - 1] = h;
    let src = t.data();
    // output (i, j) of the W×H plane comes from input (h − 1 − j, i)
    Tensor::from_fn(&shape, |idx| {
        let plane = idx / (h * w);
        let (i, j) = ((idx % (h * w)) / h, idx % h);
        src[plane * h * w + (h - 1 - j) * w + i]
    })
}

/// A random flip/rotation applied identically to both images and the label,
/// then clamped Gaussian noise on the images only. Fully determined by `seed`.
pub fn augment<T: Real>(sample: &BiTemporalSample<T>, cfg: &AugmentConfig, seed: u64) -> BiTemporalSample<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transform = Transform {
        flip: rng.random::<f64>() < cfg.flip_prob,
        quarter_turns: if cfg.rotate { rng.random_range(0..4u8) } else { 0 },
    };
    let mut xa = transform.apply(&sample.xa);
    let mut xb = transform.apply(&sample.xb);
    let y = transform.apply(&sample.y);
    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).expect("finite positive std");
        for x in [&mut xa, &mut xb] {
            for v in x.data_mut() {
                let noisy = v.as_f64() + normal.sample(&mut rng);
                *v = T::lit(noisy.clamp(0.0, 1.0));
            }
        }
    }
    BiTemporalSample { xa, xb, y }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| i as f64)
    }

    #[test]
    fn rotation_moves_top_left_to_top_right() {
        let t = ramp(&[1, 2, 3]);
        // [[0 1 2] [3 4 5]] → [[3 0] [4 1] [5 2]]
        assert_eq!(rot90(&t, 1).data(), &[3.0, 0.0, 4.0, 1.0, 5.0, 2.0]);
        assert_eq!(rot90(&t, 1).shape(), &[1, 3, 2]);
        assert_eq!(rot90(&t, 4), t);
    }

    #[test]
    fn flip_is_an_involution() {
        let t = ramp(&[2, 3, 4]);
        assert_eq!(hflip(&hflip(&t)), t);
        assert_eq!(hflip(&t).data()[..4], [3.0, 2.0, 1.0, 0.0]);
    }
}
