//! Difficulty-adaptive single-image super-resolution.
//!
//! LR images are tiled into 48×48 patches. A small classifier predicts how
//! hard each patch is for bicubic interpolation; easy patches are upscaled
//! bicubically and the rest go through a residual CNN.

pub mod checkpoint;
pub mod difficulty;
pub mod error;
pub mod image;
pub mod metrics;
pub mod patching;
pub mod resample;
pub mod srnet;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
