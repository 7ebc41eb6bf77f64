//! Sliding-window tiling with overlap, and stitching tile outputs back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, RasterImage, RealImage, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileConfig {
    pub patch_size: usize,
    pub stride: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            patch_size: 512,
            stride: 256,
        }
    }
}

impl TileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.stride == 0 || self.stride > self.patch_size {
            return Err(Error::invalid(
                "tile config",
                format!("need 0 < stride ({}) <= patch size ({})", self.stride, self.patch_size),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileOrigin {
    pub x: usize,
    pub y: usize,
}

/// Planned tile origins, sorted row-major (by `y`, then `x`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileIndex {
    pub width: usize,
    pub height: usize,
    pub config: TileConfig,
    pub origins: Vec<TileOrigin>,
}

/// `0, stride, 2·stride, …` up to the last window that fits, plus one window
/// snapped to the far edge.
fn axis_origins(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = dim - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

pub fn plan_tiles(width: usize, height: usize, cfg: &TileConfig) -> Result<TileIndex> {
    cfg.validate()?;
    if width < cfg.patch_size || height < cfg.patch_size {
        return Err(Error::invalid(
            "image size",
            format!(
                "{width}x{height} is smaller than the {p}x{p} patch; pad the image upstream",
                p = cfg.patch_size
            ),
        ));
    }
    let xs = axis_origins(width, cfg.patch_size, cfg.stride);
    let ys = axis_origins(height, cfg.patch_size, cfg.stride);
    let origins = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| TileOrigin { x, y }))
        .collect();
    Ok(TileIndex {
        width,
        height,
        config: *cfg,
        origins,
    })
}

pub fn extract_tile<T: Sample>(img: &RasterImage<T>, origin: TileOrigin, cfg: &TileConfig) -> Result<RasterImage<T>> {
    img.crop(origin.x, origin.y, cfg.patch_size, cfg.patch_size)
}

pub fn extract_mask_tile(mask: &BinaryMask, origin: TileOrigin, cfg: &TileConfig) -> Result<BinaryMask> {
    mask.crop(origin.x, origin.y, cfg.patch_size, cfg.patch_size)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StitchMode {
    #[default]
    Max,
    Mean,
}

impl std::str::FromStr for StitchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(StitchMode::Max),
            "mean" => Ok(StitchMode::Mean),
            other => Err(Error::invalid(
                "stitch mode",
                format!("{other:?} (expected max or mean)"),
            )),
        }
    }
}

/// Recombines single-channel tiles into a `width`×`height` grid.
///
/// Tiles are accumulated in sorted origin order so the result does not
/// depend on the order they are passed in.
pub fn stitch(tiles: &[(TileOrigin, RealImage)], width: usize, height: usize, mode: StitchMode) -> Result<RealImage> {
    let mut order: Vec<usize> = (0..tiles.len()).collect();
    order.sort_by_key(|&i| tiles[i].0);

    let mut acc = vec![0f64; width * height];
    let mut hits = vec![0u32; width * height];
    for i in order {
        let (origin, tile) = &tiles[i];
        if tile.channels() != 1 {
            return Err(Error::invalid(
                "tile",
                format!("expected 1 channel, found {}", tile.channels()),
            ));
        }
        if origin.x + tile.width() > width || origin.y + tile.height() > height {
            return Err(Error::invalid(
                "tile",
                format!(
                    "{}x{} tile at ({}, {}) exceeds {width}x{height}",
                    tile.width(),
                    tile.height(),
                    origin.x,
                    origin.y
                ),
            ));
        }
        for ty in 0..tile.height() {
            for tx in 0..tile.width() {
                let idx = (origin.y + ty) * width + origin.x + tx;
                let v = tile.get(tx, ty, 0);
                acc[idx] = match (mode, hits[idx]) {
                    (_, 0) => v,
                    (StitchMode::Max, _) => acc[idx].max(v),
                    (StitchMode::Mean, _) => acc[idx] + v,
                };
                hits[idx] += 1;
            }
        }
    }
    if let Some(idx) = hits.iter().position(|&h| h == 0) {
        return Err(Error::Uncovered {
            x: idx % width,
            y: idx / width,
        });
    }
    if mode == StitchMode::Mean {
        for (a, &h) in acc.iter_mut().zip(&hits) {
            *a /= f64::from(h);
        }
    }
    RealImage::new(width, height, 1, acc)
}
