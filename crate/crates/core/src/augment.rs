//! Seeded geometric and color augmentation for image/mask pairs.
//!
//! Every random decision is captured in a serializable draw record so an
//! augmentation can be replayed exactly. Draws are taken from a ChaCha8
//! stream in a fixed order, one uniform `[0, 1)` value each, regardless of
//! which transforms are enabled:
//!
//! 1. rescale factor
//! 2. rotation quarter-turns
//! 3. horizontal flip
//! 4. vertical flip
//! 5. crop x, 6. crop y
//! 7. hue delta, 8. saturation delta, 9. value delta

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imagecore::{quantize, BinaryMask, Image8};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub seed: u64,
    pub rescale: bool,
    pub rotate: bool,
    pub hflip: bool,
    pub vflip: bool,
    pub crop: bool,
    pub hsv: bool,
    pub rescale_range: [f64; 2],
    /// Maximum magnitude of the hue, saturation and value shifts.
    pub hsv_deltas: [f64; 3],
    pub crop_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rescale: true,
            rotate: true,
            hflip: true,
            vflip: true,
            crop: true,
            hsv: true,
            rescale_range: [0.8, 1.2],
            hsv_deltas: [0.02, 0.1, 0.1],
            crop_size: 512,
        }
    }
}

impl AugmentConfig {
    /// Every transform switched off.
    pub fn identity() -> Self {
        Self {
            rescale: false,
            rotate: false,
            hflip: false,
            vflip: false,
            crop: false,
            hsv: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.rescale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(
                "rescale range",
                format!("[{lo}, {hi}] must satisfy 0 < lo <= hi"),
            ));
        }
        if self.hsv_deltas.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(Error::invalid(
                "hsv deltas",
                format!("{:?} must be non-negative", self.hsv_deltas),
            ));
        }
        if self.crop && self.crop_size == 0 {
            return Err(Error::invalid("crop size", "0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropDraw {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeometricDraw {
    pub scale: Option<f64>,
    /// Clockwise quarter turns, 0..=3.
    pub rotation: u8,
    pub hflip: bool,
    pub vflip: bool,
    pub crop: Option<CropDraw>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HsvDraw {
    pub dh: f64,
    pub ds: f64,
    pub dv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub geometric: GeometricDraw,
    pub hsv: Option<HsvDraw>,
}

/// Per-sample seed from the run seed, an image identifier and a step.
pub fn derive_seed(global_seed: u64, image_id: &str, step: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update((image_id.len() as u64).to_le_bytes());
    h.update(image_id.as_bytes());
    h.update(step.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn scaled_dim(dim: usize, scale: f64) -> usize {
    ((dim as f64 * scale).round() as usize).max(1)
}

/// Draws the geometric parameters for an input of the given size.
pub fn sample_geometric(width: usize, height: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<GeometricDraw> {
    cfg.validate()?;
    let u: [f64; 6] = std::array::from_fn(|_| rng.random::<f64>());
    let [lo, hi] = cfg.rescale_range;
    let scale = cfg.rescale.then(|| lo + u[0] * (hi - lo));
    let rotation = if cfg.rotate { ((u[1] * 4.0) as u8).min(3) } else { 0 };

    let (mut w, mut h) = match scale {
        Some(s) => (scaled_dim(width, s), scaled_dim(height, s)),
        None => (width, height),
    };
    if rotation % 2 == 1 {
        std::mem::swap(&mut w, &mut h);
    }
    let crop = if cfg.crop {
        let size = cfg.crop_size;
        if w < size || h < size {
            return Err(Error::invalid(
                "crop size",
                format!("transformed image {w}x{h} is smaller than crop {size}x{size}"),
            ));
        }
        let pick = |u: f64, span: usize| ((u * (span + 1) as f64) as usize).min(span);
        Some(CropDraw {
            x: pick(u[4], w - size),
            y: pick(u[5], h - size),
            size,
        })
    } else {
        None
    };
    Ok(GeometricDraw {
        scale,
        rotation,
        hflip: cfg.hflip && u[2] < 0.5,
        vflip: cfg.vflip && u[3] < 0.5,
        crop,
    })
}

pub fn sample_hsv(cfg: &AugmentConfig, rng: &mut impl Rng) -> Option<HsvDraw> {
    let u: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
    let [mh, ms, mv] = cfg.hsv_deltas;
    cfg.hsv.then(|| HsvDraw {
        dh: mh * (2.0 * u[0] - 1.0),
        ds: ms * (2.0 * u[1] - 1.0),
        dv: mv * (2.0 * u[2] - 1.0),
    })
}

/// Bilinear resample with pixel-center alignment.
pub fn resize_bilinear(img: &Image8, new_w: usize, new_h: usize) -> Image8 {
    let (w, h) = (img.width(), img.height());
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    Image8::from_fn(new_w, new_h, img.channels(), |x, y, c| {
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let p = |xx, yy| f64::from(img.get(xx, yy, c));
        let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
        let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
        quantize(top * (1.0 - ty) + bottom * ty)
    })
    .expect("non-empty target size")
}

fn nearest_index(i: usize, scale: f64, dim: usize) -> usize {
    (((i as f64 + 0.5) * scale) as usize).min(dim - 1)
}

fn resize_nearest(mask: &BinaryMask, new_w: usize, new_h: usize) -> BinaryMask {
    let sx = mask.width() as f64 / new_w as f64;
    let sy = mask.height() as f64 / new_h as f64;
    BinaryMask::from_fn(new_w, new_h, |x, y| {
        mask.get(nearest_index(x, sx, mask.width()), nearest_index(y, sy, mask.height()))
    })
}

/// Maps an output pixel to its source pixel for an isometry on a `w`×`h`
/// input. `turns` is the number of clockwise quarter turns.
fn source_of(x: usize, y: usize, w: usize, h: usize, turns: u8) -> (usize, usize) {
    match turns % 4 {
        0 => (x, y),
        1 => (y, h - 1 - x),
        2 => (w - 1 - x, h - 1 - y),
        _ => (w - 1 - y, x),
    }
}

pub fn rotate90_image(img: &Image8, turns: u8) -> Image8 {
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = if turns % 2 == 1 { (h, w) } else { (w, h) };
    Image8::from_fn(ow, oh, img.channels(), |x, y, c| {
        let (sx, sy) = source_of(x, y, w, h, turns);
        img.get(sx, sy, c)
    })
    .expect("same pixel count")
}

pub fn rotate90_mask(mask: &BinaryMask, turns: u8) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let (ow, oh) = if turns % 2 == 1 { (h, w) } else { (w, h) };
    BinaryMask::from_fn(ow, oh, |x, y| {
        let (sx, sy) = source_of(x, y, w, h, turns);
        mask.get(sx, sy)
    })
}

fn flip_image(img: &Image8, horizontal: bool) -> Image8 {
    let (w, h) = (img.width(), img.height());
    Image8::from_fn(w, h, img.channels(), |x, y, c| {
        if horizontal {
            img.get(w - 1 - x, y, c)
        } else {
            img.get(x, h - 1 - y, c)
        }
    })
    .expect("same shape")
}

fn flip_mask(mask: &BinaryMask, horizontal: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    BinaryMask::from_fn(w, h, |x, y| {
        if horizontal {
            mask.get(w - 1 - x, y)
        } else {
            mask.get(x, h - 1 - y)
        }
    })
}

/// Replays a geometric draw: rescale, rotate, hflip, vflip, crop.
pub fn apply_geometric(img: &Image8, mask: &BinaryMask, draw: &GeometricDraw) -> Result<(Image8, BinaryMask)> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(Error::mismatch(
            format!("image {}x{}", img.width(), img.height()),
            format!("mask {}x{}", mask.width(), mask.height()),
        ));
    }
    let (mut img, mut mask) = (img.clone(), mask.clone());
    if let Some(s) = draw.scale {
        let (nw, nh) = (scaled_dim(img.width(), s), scaled_dim(img.height(), s));
        img = resize_bilinear(&img, nw, nh);
        mask = resize_nearest(&mask, nw, nh);
    }
    if !draw.rotation.is_multiple_of(4) {
        img = rotate90_image(&img, draw.rotation);
        mask = rotate90_mask(&mask, draw.rotation);
    }
    if draw.hflip {
        img = flip_image(&img, true);
        mask = flip_mask(&mask, true);
    }
    if draw.vflip {
        img = flip_image(&img, false);
        mask = flip_mask(&mask, false);
    }
    if let Some(c) = draw.crop {
        if img.width() < c.size || img.height() < c.size {
            return Err(Error::invalid(
                "crop size",
                format!(
                    "transformed image {}x{} is smaller than crop {s}x{s}",
                    img.width(),
                    img.height(),
                    s = c.size
                ),
            ));
        }
        img = img.crop(c.x, c.y, c.size, c.size)?;
        mask = mask.crop(c.x, c.y, c.size, c.size)?;
    }
    Ok((img, mask))
}

/// Draws and applies the geometric transforms.
pub fn geometric_augment(
    img: &Image8,
    mask: &BinaryMask,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(Image8, BinaryMask, GeometricDraw)> {
    let draw = sample_geometric(img.width(), img.height(), cfg, rng)?;
    let (img, mask) = apply_geometric(img, mask, &draw)?;
    Ok((img, mask, draw))
}

/// RGB in `[0, 1]` to HSV with `h` in `[0, 1)`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h.rem_euclid(1.0), s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u8 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Shifts hue (wrapping), saturation and value (clamped) of an RGB image.
pub fn hsv_jitter(img: &Image8, draw: &HsvDraw) -> Result<Image8> {
    if img.channels() != 3 {
        return Err(Error::invalid(
            "hsv input",
            format!("expected 3 channels, found {}", img.channels()),
        ));
    }
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        let [r, g, b] = [px[0], px[1], px[2]].map(|v| f64::from(v) / 255.0);
        let (h, s, v) = rgb_to_hsv(r, g, b);
        let (r, g, b) = hsv_to_rgb(
            (h + draw.dh).rem_euclid(1.0),
            (s + draw.ds).clamp(0.0, 1.0),
            (v + draw.dv).clamp(0.0, 1.0),
        );
        data.extend([r, g, b].map(|c| quantize(c * 255.0)));
    }
    Image8::new(img.width(), img.height(), 3, data)
}

/// Full augmentation of one pair: geometric transforms, then color jitter
/// when enabled.
pub fn augment_pair(
    img: &Image8,
    mask: &BinaryMask,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(Image8, BinaryMask, AugmentDraw)> {
    let (img, mask, geometric) = geometric_augment(img, mask, cfg, rng)?;
    let hsv = sample_hsv(cfg, rng);
    let img = match &hsv {
        Some(d) => hsv_jitter(&img, d)?,
        None => img,
    };
    Ok((img, mask, AugmentDraw { geometric, hsv }))
}

/// Replays a recorded [`AugmentDraw`].
pub fn replay(img: &Image8, mask: &BinaryMask, draw: &AugmentDraw) -> Result<(Image8, BinaryMask)> {
    let (img, mask) = apply_geometric(img, mask, &draw.geometric)?;
    let img = match &draw.hsv {
        Some(d) => hsv_jitter(&img, d)?,
        None => img,
    };
    Ok((img, mask))
}
