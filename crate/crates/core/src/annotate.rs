//! Annotation ingestion and box-to-mask training label generation.
//!
//! Cells come from an external instance segmenter as an
//! [`InstanceLabelMap`]; a cell is kept as foreground when its pixel set
//! overlaps some annotation box with IoU strictly above the threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{BBox, BinaryMask, InstanceLabelMap, PixelRect, Point2D};

/// Category id of a mitotic figure.
pub const MITOTIC_FIGURE: i64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub image_id: i64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<BBox>,
}

impl AnnotationSet {
    /// Centers of the boxes whose category is in `categories`.
    pub fn centers(&self, categories: &BTreeSet<i64>) -> Vec<Point2D> {
        self.boxes
            .iter()
            .filter(|b| categories.contains(&b.category))
            .map(BBox::center)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskGenConfig {
    pub iou_threshold: f64,
    pub categories: BTreeSet<i64>,
}

impl Default for MaskGenConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.8,
            categories: BTreeSet::from([MITOTIC_FIGURE]),
        }
    }
}

impl MaskGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::invalid(
                "iou threshold",
                format!("{} is outside (0, 1]", self.iou_threshold),
            ));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: i64,
    file_name: String,
    width: usize,
    height: usize,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: i64,
    bbox: [f64; 4],
    category_id: i64,
}

/// Parses a COCO-subset annotation file. Boxes are clipped to their image.
pub fn parse_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationSet>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_annotations_str(&text).map_err(|e| match e {
        Error::Json {
            line, column, reason, ..
        } => Error::Json {
            path: path.to_path_buf(),
            line,
            column,
            reason,
        },
        other => other,
    })
}

pub fn parse_annotations_str(text: &str) -> Result<Vec<AnnotationSet>> {
    let file: CocoFile = serde_json::from_str(text).map_err(|e| Error::Json {
        path: "<annotations>".into(),
        line: e.line(),
        column: e.column(),
        reason: e.to_string(),
    })?;
    let mut sets: BTreeMap<i64, AnnotationSet> = BTreeMap::new();
    for img in file.images {
        if img.width == 0 || img.height == 0 {
            return Err(Error::invalid(
                "image entry",
                format!("image {} has size {}x{}", img.id, img.width, img.height),
            ));
        }
        let previous = sets.insert(
            img.id,
            AnnotationSet {
                image_id: img.id,
                file_name: img.file_name,
                width: img.width,
                height: img.height,
                boxes: Vec::new(),
            },
        );
        if previous.is_some() {
            return Err(Error::invalid("image entry", format!("duplicate image id {}", img.id)));
        }
    }
    for ann in file.annotations {
        let set = sets.get_mut(&ann.image_id).ok_or(Error::UnknownImageId(ann.image_id))?;
        let [x, y, w, h] = ann.bbox;
        let bbox = BBox::new(x, y, w, h, ann.category_id)?;
        let clipped = bbox.clip(set.width, set.height).ok_or_else(|| {
            Error::invalid(
                "box",
                format!(
                    "[{x}, {y}, {w}, {h}] lies outside image {} ({}x{})",
                    set.image_id, set.width, set.height
                ),
            )
        })?;
        set.boxes.push(clipped);
    }
    Ok(sets.into_values().collect())
}

/// `|cell ∩ box| / |cell ∪ box|` over pixels, where `cell` lists `(x, y)`
/// coordinates without duplicates.
pub fn mask_box_iou(cell: &[(usize, usize)], bbox: &BBox) -> f64 {
    rect_iou(cell, &bbox.pixel_rect())
}

fn rect_iou(cell: &[(usize, usize)], rect: &PixelRect) -> f64 {
    let inter = cell.iter().filter(|&&(x, y)| rect.contains(x as i64, y as i64)).count() as u64;
    let union = cell.len() as u64 + rect.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pixel sets of every positive label, keyed by label.
pub fn cell_pixels(cells: &InstanceLabelMap) -> BTreeMap<u32, Vec<(usize, usize)>> {
    let mut out: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for y in 0..cells.height() {
        for x in 0..cells.width() {
            let l = cells.get(x, y);
            if l != 0 {
                out.entry(l).or_default().push((x, y));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskGeneration {
    pub mask: BinaryMask,
    /// Labels of the reserved cells, ascending.
    pub reserved: Vec<u32>,
    /// Boxes (after category filtering) that reserved no cell.
    pub unmatched_boxes: usize,
}

/// Union of every cell whose best IoU with a kept box exceeds the threshold.
pub fn generate_training_mask(
    cells: &InstanceLabelMap,
    ann: &AnnotationSet,
    cfg: &MaskGenConfig,
) -> Result<BinaryMask> {
    generate_training_mask_detailed(cells, ann, cfg).map(|g| g.mask)
}

pub fn generate_training_mask_detailed(
    cells: &InstanceLabelMap,
    ann: &AnnotationSet,
    cfg: &MaskGenConfig,
) -> Result<MaskGeneration> {
    cfg.validate()?;
    if cells.width() != ann.width || cells.height() != ann.height {
        return Err(Error::mismatch(
            format!("label map {}x{}", cells.width(), cells.height()),
            format!("annotated image {}x{}", ann.width, ann.height),
        ));
    }
    let rects: Vec<PixelRect> = ann
        .boxes
        .iter()
        .filter(|b| cfg.categories.contains(&b.category))
        .filter_map(|b| b.clip(ann.width, ann.height))
        .map(|b| b.pixel_rect())
        .collect();
    let mut matched_box = vec![false; rects.len()];
    let mut reserved = Vec::new();
    for (label, pixels) in cell_pixels(cells) {
        let mut keep = false;
        for (i, rect) in rects.iter().enumerate() {
            if rect_iou(&pixels, rect) > cfg.iou_threshold {
                keep = true;
                matched_box[i] = true;
            }
        }
        if keep {
            reserved.push(label);
        }
    }
    let keep: BTreeSet<u32> = reserved.iter().copied().collect();
    let mask = BinaryMask::new(
        cells.width(),
        cells.height(),
        cells.labels().iter().map(|l| keep.contains(l)).collect(),
    )?;
    Ok(MaskGeneration {
        mask,
        reserved,
        unmatched_boxes: matched_box.iter().filter(|&&m| !m).count(),
    })
}
