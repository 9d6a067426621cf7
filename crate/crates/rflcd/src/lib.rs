//! Files, training and the command line around [`rflcd_core`].
//!
//! Datasets are directories of 8-bit PNG triples (`A/`, `B/`, `label/`),
//! runs are configured by a TOML [`config::RunConfig`], and models are stored
//! in the binary [`checkpoint`] format.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod png;
pub mod run;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use rflcd_core as core;
