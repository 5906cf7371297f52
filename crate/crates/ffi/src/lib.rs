//! C ABI over the geometry, tracker and consensus routines.
//!
//! Conventions: every fallible function returns a [`TlStatus`]; on failure a
//! message is kept per thread and can be read with
//! [`tl_last_error_message`]. Handles are opaque and must be released with
//! their `_free` function. Labelers are identified by their index in the
//! panel.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use thermlabel::consensus::{majority_vote_frame, ConsensusConfig, LabelerSet};
use thermlabel::geometry::{clamp_and_filter, iou, AccountId, BoundingBox, BoxId, Category, Origin};
use thermlabel::tracker::{track_boxes, Connectivity, FrameImage, TrackerConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Panic = 4,
}

pub const TL_CATEGORY_ANIMAL: u8 = 0;
pub const TL_CATEGORY_HUMAN: u8 = 1;

pub const TL_ORIGIN_DRAWN: u8 = 0;
pub const TL_ORIGIN_PROPAGATED: u8 = 1;
pub const TL_ORIGIN_TRACKED: u8 = 2;
pub const TL_ORIGIN_REVIEW_EDITED: u8 = 3;

/// Axis-aligned box in pixel coordinates; `x`/`y` is the top-left corner.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TlBox {
    pub box_id: u64,
    pub frame_index: u32,
    pub x: i64,
    pub y: i64,
    pub width: i64,
    pub height: i64,
    /// `TL_CATEGORY_*`
    pub category: u8,
    /// `TL_ORIGIN_*`
    pub origin: u8,
    /// Panel index of the labeler who drew the box.
    pub labeler: u32,
}

/// A consensus label: the anchor box plus a bit per supporting labeler.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TlFinalLabel {
    pub bbox: TlBox,
    pub support_mask: u64,
    pub support_count: u32,
}

/// Grayscale frame owned by the library.
pub struct TlFrame {
    inner: FrameImage,
}

/// Tracker settings owned by the library.
pub struct TlTracker {
    cfg: TrackerConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: TlStatus, msg: impl Into<String>) -> TlStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> TlStatus) -> TlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(TlStatus::Panic, "internal panic"),
    }
}

fn labeler_id(i: u32) -> AccountId {
    AccountId::new(format!("{i:010}"))
}

fn to_box(b: &TlBox) -> Result<BoundingBox, String> {
    let category = match b.category {
        TL_CATEGORY_ANIMAL => Category::Animal,
        TL_CATEGORY_HUMAN => Category::Human,
        c => return Err(format!("unknown category {c}")),
    };
    let origin = match b.origin {
        TL_ORIGIN_DRAWN => Origin::Drawn,
        TL_ORIGIN_PROPAGATED => Origin::Propagated,
        TL_ORIGIN_TRACKED => Origin::Tracked,
        TL_ORIGIN_REVIEW_EDITED => Origin::ReviewEdited,
        o => return Err(format!("unknown origin {o}")),
    };
    Ok(BoundingBox {
        box_id: BoxId(b.box_id),
        frame_index: b.frame_index,
        x: b.x,
        y: b.y,
        width: b.width,
        height: b.height,
        category,
        origin,
        author_id: labeler_id(b.labeler),
    })
}

fn from_box(b: &BoundingBox, labeler: u32) -> TlBox {
    TlBox {
        box_id: b.box_id.0,
        frame_index: b.frame_index,
        x: b.x,
        y: b.y,
        width: b.width,
        height: b.height,
        category: match b.category {
            Category::Animal => TL_CATEGORY_ANIMAL,
            Category::Human => TL_CATEGORY_HUMAN,
        },
        origin: match b.origin {
            Origin::Drawn => TL_ORIGIN_DRAWN,
            Origin::Propagated => TL_ORIGIN_PROPAGATED,
            Origin::Tracked => TL_ORIGIN_TRACKED,
            Origin::ReviewEdited => TL_ORIGIN_REVIEW_EDITED,
        },
        labeler,
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize) -> Option<&'a [T]> {
    if n == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, n))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message of this thread, excluding the
/// terminating NUL; 0 when there is none.
#[no_mangle]
pub extern "C" fn tl_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |s| s.as_bytes().len()))
}

/// Copies the last error message (NUL-terminated) into `buf`.
///
/// # Safety
/// `buf` must be valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn tl_last_error_message(buf: *mut c_char, cap: usize) -> TlStatus {
    if buf.is_null() {
        return TlStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[0u8][..], |s| s.as_bytes_with_nul());
        if bytes.len() > cap {
            return TlStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len());
        TlStatus::Ok
    })
}

/// Intersection over union of two boxes.
///
/// # Safety
/// Pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn tl_iou(a: *const TlBox, b: *const TlBox, out: *mut f64) -> TlStatus {
    guard(|| {
        let (Some(a), Some(b)) = (a.as_ref(), b.as_ref()) else {
            return fail(TlStatus::NullPointer, "null box");
        };
        if out.is_null() {
            return fail(TlStatus::NullPointer, "null output");
        }
        let r = to_box(a).and_then(|a| to_box(b).map(|b| (a, b)));
        match r.and_then(|(a, b)| iou(&a, &b).map_err(|e| e.to_string())) {
            Ok(v) => {
                *out = v;
                TlStatus::Ok
            }
            Err(e) => fail(TlStatus::InvalidArgument, e),
        }
    })
}

/// Clips a box to the frame. `*kept` is set to 0 when the clipped box is
/// narrower or shorter than `min_size`, in which case `out` is untouched.
///
/// # Safety
/// Pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn tl_clamp_and_filter(
    b: *const TlBox,
    frame_width: u32,
    frame_height: u32,
    min_size: u32,
    out: *mut TlBox,
    kept: *mut u8,
) -> TlStatus {
    guard(|| {
        let Some(b) = b.as_ref() else {
            return fail(TlStatus::NullPointer, "null box");
        };
        if out.is_null() || kept.is_null() {
            return fail(TlStatus::NullPointer, "null output");
        }
        let bb = match to_box(b) {
            Ok(x) => x,
            Err(e) => return fail(TlStatus::InvalidArgument, e),
        };
        match clamp_and_filter(&bb, frame_width, frame_height, min_size) {
            Some(c) => {
                *out = from_box(&c, b.labeler);
                *kept = 1;
            }
            None => *kept = 0,
        }
        TlStatus::Ok
    })
}

/// Copies `len` row-major 8-bit pixels into a new frame.
///
/// # Safety
/// `pixels` must be valid for `len` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_frame_new(
    width: u32,
    height: u32,
    pixels: *const u8,
    len: usize,
    frame_index: u32,
    out: *mut *mut TlFrame,
) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return fail(TlStatus::NullPointer, "null output");
        }
        let Some(px) = slice(pixels, len) else {
            return fail(TlStatus::NullPointer, "null pixels");
        };
        match FrameImage::new(width, height, px.to_vec(), frame_index) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(TlFrame { inner }));
                TlStatus::Ok
            }
            Err(e) => fail(TlStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Releases a frame. Null is ignored.
///
/// # Safety
/// `frame` must come from [`tl_frame_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tl_frame_free(frame: *mut TlFrame) {
    if !frame.is_null() {
        drop(Box::from_raw(frame));
    }
}

/// Creates tracker settings. `connectivity` is 4 or 8.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_tracker_new(
    buffer: u32,
    brightness_threshold: u8,
    size_threshold: u64,
    connectivity: u8,
    out: *mut *mut TlTracker,
) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return fail(TlStatus::NullPointer, "null output");
        }
        let connectivity = match Connectivity::try_from(connectivity) {
            Ok(c) => c,
            Err(e) => return fail(TlStatus::InvalidArgument, e.to_string()),
        };
        let cfg = TrackerConfig { buffer, brightness_threshold, size_threshold, connectivity };
        if let Err(e) = cfg.validate() {
            return fail(TlStatus::InvalidArgument, e.to_string());
        }
        *out = Box::into_raw(Box::new(TlTracker { cfg }));
        TlStatus::Ok
    })
}

/// Releases a tracker. Null is ignored.
///
/// # Safety
/// `tracker` must come from [`tl_tracker_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tl_tracker_free(tracker: *mut TlTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Moves `n` boxes of the previous frame onto `frame`, writing `n` boxes to
/// `out` in input order.
///
/// # Safety
/// `prev` and `out` must be valid for `n` elements; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn tl_track_boxes(
    tracker: *const TlTracker,
    prev: *const TlBox,
    n: usize,
    frame: *const TlFrame,
    out: *mut TlBox,
) -> TlStatus {
    guard(|| {
        let (Some(t), Some(f)) = (tracker.as_ref(), frame.as_ref()) else {
            return fail(TlStatus::NullPointer, "null handle");
        };
        let Some(prev) = slice(prev, n) else {
            return fail(TlStatus::NullPointer, "null boxes");
        };
        if out.is_null() && n > 0 {
            return fail(TlStatus::NullPointer, "null output");
        }
        let boxes: Result<Vec<BoundingBox>, String> = prev.iter().map(to_box).collect();
        let tracked = boxes.and_then(|b| track_boxes(&b, &f.inner, &t.cfg).map_err(|e| e.to_string()));
        match tracked {
            Ok(v) => {
                for (i, (b, src)) in v.iter().zip(prev).enumerate() {
                    *out.add(i) = from_box(b, src.labeler);
                }
                TlStatus::Ok
            }
            Err(e) => fail(TlStatus::InvalidArgument, e),
        }
    })
}

/// Quorum vote over one frame. `boxes[i].labeler` selects the panel member
/// (`0..panel_size`, at most 64). Writes up to `cap` labels and the total
/// count to `*out_len`; returns `BufferTooSmall` when `cap` is short.
///
/// # Safety
/// `boxes` must be valid for `n` elements and `out` for `cap`.
#[no_mangle]
pub unsafe extern "C" fn tl_majority_vote_frame(
    boxes: *const TlBox,
    n: usize,
    panel_size: u32,
    iou_threshold: f64,
    quorum: u32,
    out: *mut TlFinalLabel,
    cap: usize,
    out_len: *mut usize,
) -> TlStatus {
    guard(|| {
        let Some(input) = slice(boxes, n) else {
            return fail(TlStatus::NullPointer, "null boxes");
        };
        if out_len.is_null() || (out.is_null() && cap > 0) {
            return fail(TlStatus::NullPointer, "null output");
        }
        if panel_size == 0 || panel_size > 64 {
            return fail(TlStatus::InvalidArgument, "panel size must be 1..=64");
        }
        let mut sets: Vec<LabelerSet> = (0..panel_size)
            .map(|i| LabelerSet { labeler_id: labeler_id(i), boxes: Vec::new() })
            .collect();
        for b in input {
            let Some(set) = sets.get_mut(b.labeler as usize) else {
                return fail(TlStatus::InvalidArgument, format!("labeler {} outside panel", b.labeler));
            };
            match to_box(b) {
                Ok(bb) => set.boxes.push(bb),
                Err(e) => return fail(TlStatus::InvalidArgument, e),
            }
        }
        let cfg = ConsensusConfig { iou_threshold, quorum: quorum as usize, panel_size: panel_size as usize };
        let labels = match majority_vote_frame(&sets, &cfg) {
            Ok(l) => l,
            Err(e) => return fail(TlStatus::InvalidArgument, e.to_string()),
        };
        *out_len = labels.len();
        if labels.len() > cap {
            return fail(TlStatus::BufferTooSmall, format!("{} labels, capacity {cap}", labels.len()));
        }
        let index = |a: &AccountId| a.as_str().parse::<u32>().expect("ids are panel indices");
        for (i, l) in labels.iter().enumerate() {
            let mask = l.supporting_labelers.iter().fold(0u64, |m, a| m | 1 << index(a));
            *out.add(i) = TlFinalLabel {
                bbox: from_box(&l.bbox, index(&l.bbox.author_id)),
                support_mask: mask,
                support_count: l.supporting_labelers.len() as u32,
            };
        }
        TlStatus::Ok
    })
}
