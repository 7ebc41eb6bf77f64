//! C ABI for `mitodet`.
//!
//! Objects cross the boundary as opaque handles (`MdImage`, `MdMask`,
//! `MdDetections`) that the caller releases with the matching `*_free`.
//! Every fallible function returns an [`MdStatus`]; on failure the message
//! is available from [`md_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mitodet::fda::FdaConfig;
use mitodet::imagecore::{BinaryMask, Image8, Point2D, RealImage};
use mitodet::losses::LossConfig;
use mitodet::metrics::MatchConfig;
use mitodet::postproc::{Connectivity, DetectionSet, PostprocConfig};
use mitodet::{fda, losses, metrics, postproc, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Decode = 5,
    Internal = 6,
    Panic = 7,
}

/// 8-bit raster image, 1 or 3 interleaved channels.
pub struct MdImage(Image8);

/// Binary mask.
pub struct MdMask(BinaryMask);

/// Detected centers of one image.
pub struct MdDetections(DetectionSet);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MdDetection {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub area: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MdScores {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> MdStatus {
    match e {
        Error::Io { .. } | Error::Json { .. } => MdStatus::Io,
        Error::Decode { .. } | Error::UnsupportedBitDepth { .. } | Error::UnsupportedChannels { .. } => {
            MdStatus::Decode
        }
        Error::DimensionMismatch { .. } => MdStatus::DimensionMismatch,
        Error::ImaginaryResidue { .. } | Error::Uncovered { .. } => MdStatus::Internal,
        _ => MdStatus::InvalidArgument,
    }
}

struct Fail(MdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MdStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MdStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside mitodet");
            MdStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MdStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn real_grid(data: *const f64, width: usize, height: usize, what: &str) -> Result<RealImage, Fail> {
    let len = width
        .checked_mul(height)
        .ok_or_else(|| Fail(MdStatus::InvalidArgument, format!("{what}: size overflows")))?;
    Ok(RealImage::new(width, height, 1, slice(data, len, what)?.to_vec())?)
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread ("" after a success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn md_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Copies `width * height * channels` bytes into a new image.
///
/// # Safety
/// `data` must point to that many readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn md_image_new(
    width: usize,
    height: usize,
    channels: usize,
    data: *const u8,
    out: *mut *mut MdImage,
) -> MdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let len = width.saturating_mul(height).saturating_mul(channels);
        let img = Image8::new(width, height, channels, slice(data, len, "data")?.to_vec())?;
        *out = boxed(MdImage(img));
        Ok(())
    })
}

/// Loads an 8-bit grayscale or RGB PNG.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn md_image_load(path: *const c_char, out: *mut *mut MdImage) -> MdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(MdImage(mitodet::imagecore::load_image(c_path(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `img` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn md_image_save(img: *const MdImage, path: *const c_char) -> MdStatus {
    guard(|| {
        mitodet::imagecore::save_image(&borrow(img, "img")?.0, c_path(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `img` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn md_image_free(img: *mut MdImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// # Safety
/// `img` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn md_image_width(img: *const MdImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

/// # Safety
/// `img` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn md_image_height(img: *const MdImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

/// # Safety
/// `img` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn md_image_channels(img: *const MdImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.channels())
}

/// Interleaved row-major pixels, owned by the handle.
///
/// # Safety
/// `img` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn md_image_data(img: *const MdImage) -> *const u8 {
    img.as_ref().map_or(ptr::null(), |i| i.0.data().as_ptr())
}

/// Low-frequency amplitude transfer from `reference` onto `source`.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn md_fda_transfer(
    source: *const MdImage,
    reference: *const MdImage,
    beta: f64,
    out: *mut *mut MdImage,
) -> MdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = FdaConfig { beta, quantize: true };
        let img = fda::fda_transfer(&borrow(source, "source")?.0, &borrow(reference, "reference")?.0, &cfg)?;
        *out = boxed(MdImage(img.into_u8()));
        Ok(())
    })
}

/// Nonzero pixels of a single-channel image become foreground.
///
/// # Safety
/// `img` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn md_mask_from_image(img: *const MdImage, out: *mut *mut MdMask) -> MdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(MdMask(BinaryMask::from_image(&borrow(img, "img")?.0)?));
        Ok(())
    })
}

/// Foreground where `prob >= threshold`; `prob` holds `width * height` values.
///
/// # Safety
/// `prob` must point to `width * height` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn md_binarize(
    prob: *const f64,
    width: usize,
    height: usize,
    threshold: f64,
    out: *mut *mut MdMask,
) -> MdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let grid = real_grid(prob, width, height, "prob")?;
        *out = boxed(MdMask(postproc::binarize(&grid, threshold)?));
        Ok(())
    })
}

/// # Safety
/// `mask` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn md_mask_fill_holes(mask: *const MdMask, out: *mut *mut MdMask) -> MdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(MdMask(postproc::fill_holes(&borrow(mask, "mask")?.0)));
        Ok(())
    })
}

/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn md_mask_width(mask: *const MdMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.width())
}

/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn md_mask_height(mask: *const MdMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.height())
}

/// Number of foreground pixels.
///
/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn md_mask_count(mask: *const MdMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.count())
}

/// `false` for null handles and out-of-range coordinates.
///
/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn md_mask_get(mask: *const MdMask, x: usize, y: usize) -> bool {
    mask.as_ref()
        .is_some_and(|m| x < m.0.width() && y < m.0.height() && m.0.get(x, y))
}

/// # Safety
/// `mask` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn md_mask_free(mask: *mut MdMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Threshold, fill holes, label components and report their centers.
/// `connectivity` is 4 or 8.
///
/// # Safety
/// `prob` must point to `width * height` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn md_detect(
    prob: *const f64,
    width: usize,
    height: usize,
    image_id: i64,
    threshold: f64,
    connectivity: u8,
    min_component_area: usize,
    out: *mut *mut MdDetections,
) -> MdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = PostprocConfig {
            connectivity: Connectivity::from_neighbors(connectivity)?,
            min_component_area,
            threshold,
        };
        let grid = real_grid(prob, width, height, "prob")?;
        *out = boxed(MdDetections(postproc::detect(&grid, image_id, &cfg)?));
        Ok(())
    })
}

/// # Safety
/// `det` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn md_detections_len(det: *const MdDetections) -> usize {
    det.as_ref().map_or(0, |d| d.0.points.len())
}

/// # Safety
/// `det` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn md_detections_get(det: *const MdDetections, index: usize, out: *mut MdDetection) -> MdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let d = borrow(det, "det")?;
        let p = d.0.points.get(index).ok_or_else(|| {
            Fail(
                MdStatus::InvalidArgument,
                format!("index {index} out of range ({} detections)", d.0.points.len()),
            )
        })?;
        *out = MdDetection {
            x: p.x,
            y: p.y,
            score: p.score,
            area: p.area,
        };
        Ok(())
    })
}

/// # Safety
/// `det` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn md_detections_free(det: *mut MdDetections) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

unsafe fn points(xy: *const f64, n: usize, what: &str) -> Result<Vec<Point2D>, Fail> {
    let len = n
        .checked_mul(2)
        .ok_or_else(|| Fail(MdStatus::InvalidArgument, format!("{what}: count overflows")))?;
    slice(xy, len, what)?
        .chunks_exact(2)
        .map(|c| Point2D::new(c[0], c[1]).map_err(Fail::from))
        .collect()
}

/// One-to-one matching within `radius`, then precision / recall / F1.
/// Points are packed as `x0, y0, x1, y1, ...`.
///
/// # Safety
/// `pred_xy` / `truth_xy` must hold `2 * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn md_match_points(
    pred_xy: *const f64,
    n_pred: usize,
    truth_xy: *const f64,
    n_truth: usize,
    radius: f64,
    out: *mut MdScores,
) -> MdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = MatchConfig { radius };
        cfg.validate()?;
        let pred = points(pred_xy, n_pred, "pred_xy")?;
        let truth = points(truth_xy, n_truth, "truth_xy")?;
        let m = metrics::match_points(&pred, &truth, &cfg);
        let tp = m.pairs.len() as u64;
        let s = metrics::compute_metrics(tp, n_pred as u64 - tp, n_truth as u64 - tp);
        *out = MdScores {
            tp: s.tp,
            fp: s.fp,
            fn_: s.fn_,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        };
        Ok(())
    })
}

/// Harmonic mean of precision and recall (0 when both are 0).
#[no_mangle]
pub extern "C" fn md_f1_score(precision: f64, recall: f64) -> f64 {
    metrics::f1_score(precision, recall)
}

unsafe fn loss_call(
    p: *const f64,
    y: *const f64,
    len: usize,
    cfg: &LossConfig,
    f: fn(&RealImage, &RealImage, &LossConfig) -> mitodet::Result<losses::LossValue>,
    loss_out: *mut f64,
    grad_out: *mut f64,
) -> Result<(), Fail> {
    let loss_out = out_ptr(loss_out, "loss_out")?;
    let p = real_grid(p, len, 1, "p")?;
    let y = real_grid(y, len, 1, "y")?;
    let v = f(&p, &y, cfg)?;
    *loss_out = v.loss;
    if !grad_out.is_null() && len > 0 {
        std::slice::from_raw_parts_mut(grad_out, len).copy_from_slice(&v.grad);
    }
    Ok(())
}

/// Mean focal loss over `len` pixels; `grad_out` (optional) receives
/// d loss / d p.
///
/// # Safety
/// `p`, `y` and non-null `grad_out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn md_focal_loss(
    p: *const f64,
    y: *const f64,
    len: usize,
    gamma: f64,
    alpha: f64,
    loss_out: *mut f64,
    grad_out: *mut f64,
) -> MdStatus {
    guard(|| {
        let cfg = LossConfig {
            focal_gamma: gamma,
            focal_alpha: alpha,
            ..LossConfig::default()
        };
        loss_call(p, y, len, &cfg, losses::focal_loss, loss_out, grad_out)
    })
}

/// Soft Dice loss over `len` pixels; `grad_out` (optional) receives
/// d loss / d p.
///
/// # Safety
/// `p`, `y` and non-null `grad_out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn md_dice_loss(
    p: *const f64,
    y: *const f64,
    len: usize,
    smooth: f64,
    loss_out: *mut f64,
    grad_out: *mut f64,
) -> MdStatus {
    guard(|| {
        let cfg = LossConfig {
            dice_smooth: smooth,
            ..LossConfig::default()
        };
        loss_call(p, y, len, &cfg, losses::dice_loss, loss_out, grad_out)
    })
}
