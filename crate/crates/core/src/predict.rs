//! Pluggable segmentation predictor.
//!
//! A trained network is expected to replace [`BaselinePredictor`]; anything
//! that maps an RGB image to a per-pixel probability grid fits.

use crate::error::{Error, Result};
use crate::imagecore::{Image8, RealImage};

pub trait Predictor {
    /// Single-channel probability map in `[0, 1]`, same size as `img`.
    fn predict(&self, img: &Image8) -> Result<RealImage>;
}

/// Toy stand-in: darkness of the blue channel, `1 - b/255`. Hematoxylin
/// stains nuclei dark; this says nothing about detection quality.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselinePredictor;

impl Predictor for BaselinePredictor {
    fn predict(&self, img: &Image8) -> Result<RealImage> {
        if img.channels() != 3 {
            return Err(Error::invalid(
                "predictor input",
                format!("expected 3 channels, found {}", img.channels()),
            ));
        }
        let data = img
            .data()
            .chunks_exact(3)
            .map(|px| 1.0 - f64::from(px[2]) / 255.0)
            .collect();
        RealImage::new(img.width(), img.height(), 1, data)
    }
}

/// Probability grid as 8-bit bytes (`p · 255`, clamped and rounded).
pub fn probability_to_image(prob: &RealImage) -> Image8 {
    RealImage::new(
        prob.width(),
        prob.height(),
        prob.channels(),
        prob.data().iter().map(|p| p * 255.0).collect(),
    )
    .expect("same shape")
    .from_real()
}

/// 8-bit grid to probabilities (`v / 255`).
pub fn image_to_probability(img: &Image8) -> RealImage {
    RealImage::new(
        img.width(),
        img.height(),
        img.channels(),
        img.data().iter().map(|&v| f64::from(v) / 255.0).collect(),
    )
    .expect("same shape")
}
