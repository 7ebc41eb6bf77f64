//! Building blocks for a mitosis detection pipeline on histopathology
//! images.
//!
//! - [`fda`]: Fourier domain adaptation (low-frequency amplitude swap)
//! - [`annotate`]: box annotations to training masks via instance IoU
//! - [`tiling`]: sliding-window patches and stitching
//! - [`augment`]: seeded, replayable geometric and HSV augmentation
//! - [`postproc`]: hole filling, connected components, detection centers
//! - [`metrics`]: one-to-one matching and precision / recall / F1
//! - [`losses`]: focal and Dice losses with analytic gradients
//! - [`cli`]: the `mitodet` command-line front end
//!
//! The segmentation network itself is abstracted behind
//! [`predict::Predictor`].

pub mod annotate;
pub mod augment;
pub mod cli;
pub mod config;
pub mod error;
pub mod fda;
pub mod imagecore;
pub mod losses;
pub mod metrics;
pub mod postproc;
pub mod predict;
pub mod tiling;

pub use error::{Error, Result};
