//! Bi-temporal samples, paired augmentation and the synthetic tile generator.

mod augment;
mod sample;
mod synth;

pub use augment::{augment, hflip, rot90, AugmentConfig, Transform};
pub use sample::{stack, Batch, BiTemporalSample, Raster};
pub use synth::{generate_tile, SynthConfig, SynthTile};
