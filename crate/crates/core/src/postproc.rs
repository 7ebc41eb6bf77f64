//! Segmentation to detections: binarize, fill holes, label connected
//! components, report the center of each component's bounding rectangle.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, InstanceLabelMap, Point2D, RealImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        Self::from_neighbors(n)
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        c.neighbors()
    }
}

impl Connectivity {
    pub fn from_neighbors(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::invalid("connectivity", format!("{other} (expected 4 or 8)"))),
        }
    }

    pub fn neighbors(self) -> u8 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocConfig {
    pub connectivity: Connectivity,
    pub min_component_area: usize,
    pub threshold: f64,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::Eight,
            min_component_area: 0,
            threshold: 0.5,
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(
                "threshold",
                format!("{} is outside [0, 1]", self.threshold),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    /// Pixel count of the component the point came from.
    pub area: u64,
}

impl Detection {
    pub fn point(&self) -> Point2D {
        Point2D { x: self.x, y: self.y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub image_id: i64,
    pub points: Vec<Detection>,
}

impl DetectionSet {
    pub fn centers(&self) -> Vec<Point2D> {
        self.points.iter().map(Detection::point).collect()
    }
}

/// `value >= threshold` per pixel of a single-channel grid.
pub fn binarize(prob: &RealImage, threshold: f64) -> Result<BinaryMask> {
    if prob.channels() != 1 {
        return Err(Error::invalid(
            "probability map",
            format!("expected 1 channel, found {}", prob.channels()),
        ));
    }
    BinaryMask::new(
        prob.width(),
        prob.height(),
        prob.data().iter().map(|&v| v >= threshold).collect(),
    )
}

/// Background not 4-connected to the border through background becomes
/// foreground.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<(usize, usize)>| {
        let i = y * w + x;
        if !mask.get(x, y) && !outside[i] {
            outside[i] = true;
            queue.push_back((x, y));
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut queue);
        seed(x, h.saturating_sub(1), &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut queue);
        seed(w.saturating_sub(1), y, &mut outside, &mut queue);
    }
    while let Some((x, y)) = queue.pop_front() {
        if x > 0 {
            seed(x - 1, y, &mut outside, &mut queue);
        }
        if x + 1 < w {
            seed(x + 1, y, &mut outside, &mut queue);
        }
        if y > 0 {
            seed(x, y - 1, &mut outside, &mut queue);
        }
        if y + 1 < h {
            seed(x, y + 1, &mut outside, &mut queue);
        }
    }
    BinaryMask::new(w, h, outside.into_iter().map(|o| !o).collect()).expect("same shape")
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let next = parent[i as usize];
        parent[i as usize] = parent[next as usize];
        i = next;
    }
    i
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labelling. Labels are `1..=K`, numbered in raster
/// order of each component's first pixel.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> InstanceLabelMap {
    let (w, h) = (mask.width(), mask.height());
    let mut provisional = vec![0u32; w * h];
    // parent[0] is the background sentinel.
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut n = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbors[n] = l;
                    n += 1;
                }
            };
            if x > 0 {
                push(provisional[y * w + x - 1]);
            }
            if y > 0 {
                push(provisional[(y - 1) * w + x]);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        push(provisional[(y - 1) * w + x - 1]);
                    }
                    if x + 1 < w {
                        push(provisional[(y - 1) * w + x + 1]);
                    }
                }
            }
            let label = match neighbors[..n].iter().min() {
                None => {
                    let l = parent.len() as u32;
                    parent.push(l);
                    l
                }
                Some(&m) => {
                    for &other in &neighbors[..n] {
                        union(&mut parent, m, other);
                    }
                    m
                }
            };
            provisional[y * w + x] = label;
        }
    }

    let mut remap = vec![0u32; parent.len()];
    let mut next = 0u32;
    let labels = provisional
        .iter()
        .map(|&l| {
            if l == 0 {
                return 0;
            }
            let root = find(&mut parent, l) as usize;
            if remap[root] == 0 {
                next += 1;
                remap[root] = next;
            }
            remap[root]
        })
        .collect();
    InstanceLabelMap::new(w, h, labels).expect("same shape")
}

#[derive(Debug, Clone, Copy)]
struct Extent {
    x_min: usize,
    x_max: usize,
    y_min: usize,
    y_max: usize,
    area: u64,
    score_sum: f64,
}

/// Center of the tight axis-aligned bounding rectangle of every component
/// with at least `min_component_area` pixels, sorted by `(y, x)`.
pub fn component_centers(labels: &InstanceLabelMap, image_id: i64, cfg: &PostprocConfig) -> DetectionSet {
    centers_with_scores(labels, None, image_id, cfg)
}

/// Like [`component_centers`], with each score set to the component's mean
/// probability.
pub fn component_centers_scored(
    labels: &InstanceLabelMap,
    prob: &RealImage,
    image_id: i64,
    cfg: &PostprocConfig,
) -> Result<DetectionSet> {
    if prob.width() != labels.width() || prob.height() != labels.height() || prob.channels() != 1 {
        return Err(Error::mismatch(
            format!("label map {}x{}", labels.width(), labels.height()),
            format!("probability map {}", prob.shape()),
        ));
    }
    Ok(centers_with_scores(labels, Some(prob), image_id, cfg))
}

fn centers_with_scores(
    labels: &InstanceLabelMap,
    prob: Option<&RealImage>,
    image_id: i64,
    cfg: &PostprocConfig,
) -> DetectionSet {
    let mut extents: Vec<Option<Extent>> = vec![None; labels.max_label() as usize + 1];
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            let l = labels.get(x, y) as usize;
            if l == 0 {
                continue;
            }
            let p = prob.map_or(1.0, |p| p.get(x, y, 0).clamp(0.0, 1.0));
            let e = extents[l].get_or_insert(Extent {
                x_min: x,
                x_max: x,
                y_min: y,
                y_max: y,
                area: 0,
                score_sum: 0.0,
            });
            e.x_min = e.x_min.min(x);
            e.x_max = e.x_max.max(x);
            e.y_min = e.y_min.min(y);
            e.y_max = e.y_max.max(y);
            e.area += 1;
            e.score_sum += p;
        }
    }
    let mut points: Vec<Detection> = extents
        .into_iter()
        .flatten()
        .filter(|e| e.area >= cfg.min_component_area as u64)
        .map(|e| Detection {
            x: (e.x_min + e.x_max) as f64 / 2.0,
            y: (e.y_min + e.y_max) as f64 / 2.0,
            score: e.score_sum / e.area as f64,
            area: e.area,
        })
        .collect();
    points.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
    DetectionSet { image_id, points }
}

/// Binarize, fill holes, label and take centers.
pub fn detect(prob: &RealImage, image_id: i64, cfg: &PostprocConfig) -> Result<DetectionSet> {
    cfg.validate()?;
    let mask = fill_holes(&binarize(prob, cfg.threshold)?);
    let labels = connected_components(&mask, cfg.connectivity);
    component_centers_scored(&labels, prob, image_id, cfg)
}
