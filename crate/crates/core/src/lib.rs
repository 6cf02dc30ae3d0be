//! Multi-objective segmentation training under homotopy-scheduled loss weights.
//!
//! A tiny two-layer convolutional segmenter is trained on a weighted sum of an
//! accuracy (Dice) loss, a robustness loss (negative soft mIoU under logit noise)
//! and a fairness loss (spread of per-group soft mIoU). The weights move along the
//! simplex from the accuracy corner towards a balanced point as training advances.
//!
//! Modules, bottom-up:
//! - [`dataio`]: PPM/PGM rasters, attribute CSV, checkpoint JSON, dataset directories
//! - [`datagen`]: procedural face-like scenes with a controllable group bias
//! - [`perturb`]: input corruptions used by robustness sweeps
//! - [`metrics`]: hard mIoU/Dice, per-group reports, fairness variance
//! - [`homotopy`]: epoch-indexed weight schedules
//! - [`model`]: the segmenter with hand-written forward/backward passes
//! - [`losses`]: differentiable loss terms and their weighted total
//! - [`trainer`]: the training loop and Adam

pub mod datagen;
pub mod dataio;
mod error;
pub mod evaluate;
pub mod homotopy;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};

/// Number of classes produced by the procedural generator.
pub const DEFAULT_NUM_CLASSES: usize = 6;
