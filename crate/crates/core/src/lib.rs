//! Texture-aware masked fine-tuning for AI-generated image detection.
//!
//! The crate covers mask generation ([`texmask`]), data preparation
//! ([`dataset`]), a pluggable encoder with a small trainable vision
//! transformer ([`model`]), the masked fine-tuning loop ([`trainer`]),
//! metrics and robustness perturbations ([`eval`]), and the command-line
//! reporting layer ([`report`]).

pub mod dataset;
pub mod eval;
pub mod error;
pub mod filters;
pub mod model;
pub mod report;
pub mod seed;
pub mod tensor;
pub mod texmask;
pub mod trainer;

pub use error::{Error, Result};
