//! Attribute-decoupled conditional prompt learning on a synthetic image world.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: tensors, reverse-mode autodiff, SGD.
//! - [`toyworld`]: rendered toy images, the 14 augmentations, frozen
//!   stand-in encoders and episode sampling.
//! - [`promptcore`]: learnable context, the metanet, meta and delta meta
//!   tokens, prompt assembly and prediction.
//! - [`losses`]: cross-entropy, triplet and adversarial triplet losses.
//! - [`profiling`]: silhouette profiling of delta tokens, score-driven
//!   augmentation sampling, PCA projection and embedding export.
//! - [`harness`]: configuration, training, evaluation, metrics and the CLI.

pub mod error;
pub mod harness;
pub mod losses;
pub mod numcore;
pub mod profiling;
pub mod promptcore;
pub mod seed;
pub mod toyworld;

pub use error::{Error, Result};
