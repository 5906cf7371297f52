//! Brightness-threshold box tracking between consecutive frames, plus the
//! plain copy propagation used when tracking is off.
//!
//! For every box of the previous frame: boxes larger than
//! [`TrackerConfig::size_threshold`] are copied in place. Smaller boxes get a
//! search area (the box grown by `buffer` on each side), which is thresholded
//! and labeled; when anything is found the box is re-centred on the largest
//! component, otherwise it is copied in place.

mod cca;

pub use cca::{connected_components, select_largest, ComponentStats, Connectivity, Mask};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, Origin};

pub const MAX_BUFFER: u32 = 50;

/// One single-channel 8-bit frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub frame_index: u32,
}

impl FrameImage {
    pub fn new(
        width: u32,
        height: u32,
        pixels: Vec<u8>,
        frame_index: u32,
    ) -> Result<Self, TrackerError> {
        if pixels.len() != width as usize * height as usize {
            return Err(TrackerError::PixelCount {
                expected: width as usize * height as usize,
                got: pixels.len(),
            });
        }
        Ok(FrameImage {
            width,
            height,
            pixels,
            frame_index,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8, frame_index: u32) -> Self {
        FrameImage {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
            frame_index,
        }
    }

    pub fn get(&self, row: u32, col: u32) -> u8 {
        self.pixels[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, row: u32, col: u32, v: u8) {
        self.pixels[row as usize * self.width as usize + col as usize] = v;
    }

    /// Flips black-hot footage to white-hot.
    pub fn inverted(mut self) -> Self {
        for p in &mut self.pixels {
            *p = 255 - *p;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Search-area margin in pixels (the UI slider).
    pub buffer: u32,
    /// Pixels at or above this intensity are foreground.
    pub brightness_threshold: u8,
    /// Boxes with a larger area (px²) are copied without tracking.
    pub size_threshold: u64,
    pub connectivity: Connectivity,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            buffer: 10,
            brightness_threshold: 200,
            size_threshold: 2500,
            connectivity: Connectivity::Eight,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if self.buffer > MAX_BUFFER {
            return Err(TrackerError::Config(format!(
                "buffer {} exceeds {MAX_BUFFER}",
                self.buffer
            )));
        }
        if self.size_threshold == 0 {
            return Err(TrackerError::Config("size_threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("frame has {got} pixels, expected {expected}")]
    PixelCount { expected: usize, got: usize },
    #[error("box {0} has no area")]
    EmptyBox(u64),
    #[error("search region lies entirely outside the frame")]
    RegionOutsideFrame,
    #[error("box from frame {box_frame} cannot be tracked into frame {frame}")]
    FrameMismatch { box_frame: u32, frame: u32 },
    #[error("invalid tracker configuration: {0}")]
    Config(String),
}

/// Thresholded search area and where it sits in the frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchRegion {
    pub mask: Mask,
    pub offset_x: u32,
    pub offset_y: u32,
}

/// Grows `rect` by `buffer` on every side, clips to the frame and marks
/// pixels with intensity `>= thresh`.
pub fn threshold_region(
    frame: &FrameImage,
    rect: &BoundingBox,
    buffer: u32,
    thresh: u8,
) -> Result<SearchRegion, TrackerError> {
    if rect.width <= 0 || rect.height <= 0 {
        return Err(TrackerError::EmptyBox(rect.box_id.0));
    }
    let b = buffer as i64;
    let x0 = (rect.x - b).max(0);
    let y0 = (rect.y - b).max(0);
    let x1 = (rect.right() + b).min(frame.width as i64);
    let y1 = (rect.bottom() + b).min(frame.height as i64);
    if x1 <= x0 || y1 <= y0 {
        return Err(TrackerError::RegionOutsideFrame);
    }
    let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
    let mut mask = Mask::new(w, h);
    for r in 0..h {
        let row = &frame.pixels[(y0 as usize + r) * frame.width as usize..];
        for c in 0..w {
            mask.set(r, c, row[x0 as usize + c] >= thresh);
        }
    }
    Ok(SearchRegion {
        mask,
        offset_x: x0 as u32,
        offset_y: y0 as u32,
    })
}

/// Same geometry and lineage, moved to `frame_index`, marked as propagated.
fn carried(b: &BoundingBox, frame_index: u32) -> BoundingBox {
    BoundingBox {
        frame_index,
        origin: Origin::Propagated,
        ..b.clone()
    }
}

/// Copies boxes to the next frame at the same location.
pub fn copy_boxes(prev_boxes: &[BoundingBox]) -> Vec<BoundingBox> {
    prev_boxes
        .iter()
        .map(|b| carried(b, b.frame_index + 1))
        .collect()
}

/// Moves every box of the previous frame into `new_frame`. Output order
/// follows input order; box ids, categories and sizes are kept.
pub fn track_boxes(
    prev_boxes: &[BoundingBox],
    new_frame: &FrameImage,
    cfg: &TrackerConfig,
) -> Result<Vec<BoundingBox>, TrackerError> {
    cfg.validate()?;
    if let Some(b) = prev_boxes
        .iter()
        .find(|b| b.frame_index + 1 != new_frame.frame_index)
    {
        return Err(TrackerError::FrameMismatch {
            box_frame: b.frame_index,
            frame: new_frame.frame_index,
        });
    }
    prev_boxes
        .iter()
        .map(|b| track_one(b, new_frame, cfg))
        .collect()
}

fn track_one(
    b: &BoundingBox,
    frame: &FrameImage,
    cfg: &TrackerConfig,
) -> Result<BoundingBox, TrackerError> {
    let next = frame.frame_index;
    if b.area() as u64 > cfg.size_threshold {
        return Ok(carried(b, next));
    }
    let region = match threshold_region(frame, b, cfg.buffer, cfg.brightness_threshold) {
        Ok(r) => r,
        // a box that has drifted off-frame has nothing to search
        Err(TrackerError::RegionOutsideFrame) => return Ok(carried(b, next)),
        Err(e) => return Err(e),
    };
    let components = connected_components(&region.mask, cfg.connectivity);
    let Some(largest) = select_largest(&components) else {
        return Ok(carried(b, next));
    };

    // pixel (r, c) covers [c, c+1) x [r, r+1), so its centre is at +0.5
    let cx = region.offset_x as f64 + largest.centroid_col + 0.5;
    let cy = region.offset_y as f64 + largest.centroid_row + 0.5;
    let x = (cx - b.width as f64 / 2.0 + 0.5).floor() as i64;
    let y = (cy - b.height as f64 / 2.0 + 0.5).floor() as i64;

    let x0 = x.max(0);
    let y0 = y.max(0);
    let x1 = (x + b.width).min(frame.width as i64);
    let y1 = (y + b.height).min(frame.height as i64);
    Ok(BoundingBox {
        frame_index: next,
        x: x0,
        y: y0,
        width: x1 - x0,
        height: y1 - y0,
        origin: Origin::Tracked,
        ..b.clone()
    })
}
