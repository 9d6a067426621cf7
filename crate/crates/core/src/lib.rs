//! Core of the `rflcd` change-detection stack.
//!
//! Everything in this crate is pure computation on in-memory arrays: a dense
//! tensor type with a define-by-run reverse-mode tape, the convolutional
//! layers built on top of it, the Siamese nested-UNet backbone with per-stage
//! side predictions, the coarse-to-fine guiding cascade, learnable fusion,
//! the hybrid loss, confusion-matrix metrics, the Adam optimizer, paired
//! augmentation and the synthetic tile rasteriser.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. File formats, dataset loading and the CLI live in the `rflcd`
//! companion crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod real;
pub mod seed;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
