//! Raster, mask and geometry types shared by every pipeline stage, plus PNG I/O.
//!
//! Coordinates follow raster layout: `x` is the column, `y` the row, origin
//! at the top-left corner. All grids are stored row-major.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample type of a [`RasterImage`].
pub trait Sample: Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {}
impl Sample for u8 {}
impl Sample for f64 {}

/// H×W×C intensity grid, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage<T: Sample = u8> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

/// 8-bit image as read from and written to disk.
pub type Image8 = RasterImage<u8>;
/// Real-valued working copy.
pub type RealImage = RasterImage<f64>;

impl<T: Sample> RasterImage<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(
                "image size",
                format!("{width}x{height} has a zero dimension"),
            ));
        }
        if channels == 0 {
            return Err(Error::invalid("channel count", "0"));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::mismatch(
                format!("data length {}", data.len()),
                format!("{width}x{height}x{channels} = {expected}"),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `"WxHxC"`, used in error messages.
    pub fn shape(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub fn same_shape<U: Sample>(&self, other: &RasterImage<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: T) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Pixel `(x, y)` as a channel slice.
    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// One channel as a row-major plane.
    pub fn channel_plane(&self, c: usize) -> Vec<T> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    /// Interleaves equally sized planes into an image.
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<T>]) -> Result<Self> {
        let channels = planes.len();
        if let Some(bad) = planes.iter().find(|p| p.len() != width * height) {
            return Err(Error::mismatch(
                format!("plane length {}", bad.len()),
                format!("{width}x{height}"),
            ));
        }
        let mut data = Vec::with_capacity(width * height * channels);
        for i in 0..width * height {
            data.extend(planes.iter().map(|p| p[i]));
        }
        Self::new(width, height, channels, data)
    }

    /// Copies the `w`×`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(
                "crop window",
                format!("{w}x{h} at ({x0}, {y0}) exceeds image {}x{}", self.width, self.height),
            ));
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Self::new(w, h, self.channels, data)
    }
}

impl Image8 {
    /// Exact widening to `f64`.
    pub fn to_real(&self) -> RealImage {
        RealImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

impl RealImage {
    /// Clamps to `[0, 255]` and rounds half away from zero.
    pub fn from_real(&self) -> Image8 {
        Image8 {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| quantize(v)).collect(),
        }
    }
}

/// Real to 8-bit: clamp, then round half away from zero. NaN maps to 0.
#[inline]
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.clamp(0.0, 255.0).round() as u8
}

/// Row-major boolean grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::mismatch(
                format!("mask length {}", bits.len()),
                format!("{width}x{height}"),
            ));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(
                "crop window",
                format!("{w}x{h} at ({x0}, {y0}) exceeds mask {}x{}", self.width, self.height),
            ));
        }
        Ok(Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// Single-channel image with 255 for foreground.
    pub fn to_image(&self) -> Image8 {
        Image8 {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    /// Nonzero pixels of a single-channel image become foreground.
    pub fn from_image(img: &Image8) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::invalid(
                "mask image",
                format!("expected 1 channel, found {}", img.channels()),
            ));
        }
        Self::new(img.width(), img.height(), img.data().iter().map(|&v| v != 0).collect())
    }
}

/// Row-major cell identifiers, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl InstanceLabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::mismatch(
                format!("label map length {}", labels.len()),
                format!("{width}x{height}"),
            ));
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Foreground mask (label != 0).
    pub fn foreground(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l != 0).collect(),
        }
    }
}

/// Axis-aligned annotation box in pixel units.
///
/// A pixel `(c, r)` belongs to the box when its center `(c + 0.5, r + 0.5)`
/// lies in `[x_min, x_min + width) × [y_min, y_min + height)`; for integer
/// boxes that is columns `x_min ..= x_min + width - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub width: f64,
    pub height: f64,
    pub category: i64,
}

/// Half-open integer pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl PixelRect {
    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn area(&self) -> u64 {
        if self.is_empty() {
            0
        } else {
            ((self.x1 - self.x0) * (self.y1 - self.y0)) as u64
        }
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, width: f64, height: f64, category: i64) -> Result<Self> {
        let finite = [x_min, y_min, width, height].iter().all(|v| v.is_finite());
        if !finite || width <= 0.0 || height <= 0.0 {
            return Err(Error::invalid(
                "box",
                format!("[{x_min}, {y_min}, {width}, {height}] must be finite with positive size"),
            ));
        }
        Ok(Self {
            x_min,
            y_min,
            width,
            height,
            category,
        })
    }

    pub fn center(&self) -> Point2D {
        Point2D {
            x: self.x_min + self.width / 2.0,
            y: self.y_min + self.height / 2.0,
        }
    }

    pub fn pixel_rect(&self) -> PixelRect {
        PixelRect {
            x0: (self.x_min - 0.5).ceil() as i64,
            y0: (self.y_min - 0.5).ceil() as i64,
            x1: (self.x_min + self.width - 0.5).ceil() as i64,
            y1: (self.y_min + self.height - 0.5).ceil() as i64,
        }
    }

    /// Intersection with `[0, width) × [0, height)`; `None` when nothing of
    /// the box (at pixel granularity) remains.
    pub fn clip(&self, width: usize, height: usize) -> Option<BBox> {
        let x0 = self.x_min.max(0.0);
        let y0 = self.y_min.max(0.0);
        let x1 = (self.x_min + self.width).min(width as f64);
        let y1 = (self.y_min + self.height).min(height as f64);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        let clipped = BBox {
            x_min: x0,
            y_min: y0,
            width: x1 - x0,
            height: y1 - y0,
            category: self.category,
        };
        (!clipped.pixel_rect().is_empty()).then_some(clipped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::invalid("point", format!("({x}, {y}) is not finite")));
        }
        Ok(Self { x, y })
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

fn open_decoded(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = reader.with_guessed_format().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    reader.decode().map_err(|e| match e {
        image::ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Decode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

fn bit_depth(color: ColorType) -> u16 {
    (color.bytes_per_pixel() / color.channel_count()) as u16 * 8
}

/// Reads an 8-bit grayscale or RGB PNG without any color transformation.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image8> {
    let path = path.as_ref();
    let decoded = open_decoded(path)?;
    let color = decoded.color();
    let depth = bit_depth(color);
    if depth != 8 {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            found: depth,
        });
    }
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(buf) => Image8::new(w, h, 1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => Image8::new(w, h, 3, buf.into_raw()),
        _ => Err(Error::UnsupportedChannels {
            path: path.to_path_buf(),
            found: color.channel_count(),
        }),
    }
}

/// Writes a lossless PNG; 1 or 3 channels.
pub fn save_image(img: &Image8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let color = match img.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        n => {
            return Err(Error::UnsupportedChannels {
                path: path.to_path_buf(),
                found: n as u8,
            })
        }
    };
    image::save_buffer_with_format(
        path,
        img.data(),
        img.width() as u32,
        img.height() as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(other.to_string()),
        },
    })
}

/// Reads an instance label map: a single-channel PNG, 8- or 16-bit.
pub fn load_label_map(path: impl AsRef<Path>) -> Result<InstanceLabelMap> {
    let path = path.as_ref();
    let decoded = open_decoded(path)?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(buf) => {
            InstanceLabelMap::new(w, h, buf.into_raw().into_iter().map(u32::from).collect())
        }
        DynamicImage::ImageLuma16(buf) => {
            InstanceLabelMap::new(w, h, buf.into_raw().into_iter().map(u32::from).collect())
        }
        other => Err(Error::UnsupportedChannels {
            path: path.to_path_buf(),
            found: other.color().channel_count(),
        }),
    }
}

/// Writes a label map as a 16-bit grayscale PNG.
pub fn save_label_map(labels: &InstanceLabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if labels.max_label() > u32::from(u16::MAX) {
        return Err(Error::invalid(
            "label map",
            format!("label {} does not fit in 16 bits", labels.max_label()),
        ));
    }
    let raw: Vec<u16> = labels.labels().iter().map(|&l| l as u16).collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(labels.width() as u32, labels.height() as u32, raw)
        .expect("length checked at construction");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })
}
