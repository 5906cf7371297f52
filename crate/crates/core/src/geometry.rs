//! Box arithmetic: IoU, clamping with the minimum-size filter, and greedy
//! one-to-one matching between two label sets of the same frame.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Boxes narrower or shorter than this (in pixels) are rejected.
pub const DEFAULT_MIN_BOX_SIZE: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxId(pub u64);

impl fmt::Display for BoxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(pub String);

impl AccountId {
    pub fn new(id: impl Into<String>) -> Self {
        AccountId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Animal,
    Human,
}

impl Category {
    /// Display colour the labeling UI uses for this class.
    pub fn color(self) -> &'static str {
        match self {
            Category::Animal => "red",
            Category::Human => "blue",
        }
    }

    /// Next class in the click-to-cycle order.
    pub fn cycled(self) -> Self {
        match self {
            Category::Animal => Category::Human,
            Category::Human => Category::Animal,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Animal => "Animal",
            Category::Human => "Human",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Drawn,
    Propagated,
    Tracked,
    ReviewEdited,
}

/// Axis-aligned pixel rectangle. Covers columns `x..x+width` and rows
/// `y..y+height`; area is `width * height`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub box_id: BoxId,
    pub frame_index: u32,
    pub x: i64,
    pub y: i64,
    pub width: i64,
    pub height: i64,
    pub category: Category,
    pub origin: Origin,
    pub author_id: AccountId,
}

impl BoundingBox {
    pub fn area(&self) -> i64 {
        self.width * self.height
    }

    pub fn right(&self) -> i64 {
        self.x + self.width
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.height
    }

    /// Continuous centre, in pixel units (`x + width / 2`).
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.width as f64 / 2.0,
            self.y as f64 + self.height as f64 / 2.0,
        )
    }

    pub fn same_geometry(&self, other: &BoundingBox) -> bool {
        self.x == other.x
            && self.y == other.y
            && self.width == other.width
            && self.height == other.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub anchor_box_id: BoxId,
    pub other_box_id: BoxId,
    pub iou: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box {0} has zero or negative area")]
    ZeroArea(BoxId),
    #[error("boxes span several frames ({0} and {1})")]
    MixedFrames(u32, u32),
    #[error("matching threshold {0} outside (0, 1]")]
    BadThreshold(f64),
}

/// Area of the overlap of two boxes, zero when they are disjoint.
pub fn intersection_area(a: &BoundingBox, b: &BoundingBox) -> i64 {
    let w = a.right().min(b.right()) - a.x.max(b.x);
    let h = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if w <= 0 || h <= 0 {
        0
    } else {
        w * h
    }
}

/// Intersection over union. Areas are exact integers; the only floating
/// point step is the final division.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64, GeometryError> {
    for bx in [a, b] {
        if bx.width <= 0 || bx.height <= 0 {
            return Err(GeometryError::ZeroArea(bx.box_id));
        }
    }
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    Ok(inter as f64 / union as f64)
}

/// Clips `b` to a `frame_w x frame_h` frame. Returns `None` when the clipped
/// box is narrower or shorter than `min_size`.
pub fn clamp_and_filter(
    b: &BoundingBox,
    frame_w: u32,
    frame_h: u32,
    min_size: u32,
) -> Option<BoundingBox> {
    let x0 = b.x.max(0);
    let y0 = b.y.max(0);
    let x1 = b.right().min(frame_w as i64);
    let y1 = b.bottom().min(frame_h as i64);
    let (w, h) = (x1 - x0, y1 - y0);
    let min = (min_size as i64).max(1);
    if w < min || h < min {
        return None;
    }
    Some(BoundingBox {
        x: x0,
        y: y0,
        width: w,
        height: h,
        ..b.clone()
    })
}

/// Greedy one-to-one matching: every cross pair with IoU at or above
/// `threshold` is a candidate; candidates are accepted in descending IoU
/// order (ties by anchor id, then other id) unless either side is taken.
pub fn greedy_match(
    set_a: &[BoundingBox],
    set_b: &[BoundingBox],
    threshold: f64,
) -> Result<Vec<MatchPair>, GeometryError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(GeometryError::BadThreshold(threshold));
    }
    let mut frames = set_a.iter().chain(set_b).map(|b| b.frame_index);
    if let Some(first) = frames.next() {
        if let Some(other) = frames.find(|&f| f != first) {
            return Err(GeometryError::MixedFrames(first, other));
        }
    }

    let mut candidates = Vec::new();
    for (i, a) in set_a.iter().enumerate() {
        for (j, b) in set_b.iter().enumerate() {
            let v = iou(a, b)?;
            if v >= threshold {
                candidates.push((v, i, j));
            }
        }
    }
    candidates.sort_by(|&(v1, i1, j1), &(v2, i2, j2)| {
        v2.partial_cmp(&v1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| set_a[i1].box_id.cmp(&set_a[i2].box_id))
            .then_with(|| set_b[j1].box_id.cmp(&set_b[j2].box_id))
            .then_with(|| (i1, j1).cmp(&(i2, j2)))
    });

    let mut used_a = vec![false; set_a.len()];
    let mut used_b = vec![false; set_b.len()];
    let mut pairs = Vec::new();
    for (v, i, j) in candidates {
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        pairs.push(MatchPair {
            anchor_box_id: set_a[i].box_id,
            other_box_id: set_b[j].box_id,
            iou: v,
        });
    }
    Ok(pairs)
}
