use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{VideoSegment, WorkflowError};
use crate::geometry::{clamp_and_filter, AccountId, BoundingBox, BoxId, Category, Origin};
use crate::tracker::{copy_boxes, track_boxes, FrameImage, TrackerConfig};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubmissionId(pub String);

impl SubmissionId {
    pub fn new(id: impl Into<String>) -> Self {
        SubmissionId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubmissionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Label,
    Review,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubmissionStatus {
    InProgress,
    Submitted,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEntry {
    pub frame_index: u32,
    pub active_seconds: f64,
}

/// Everything that can happen to a submission. Replaying a log of these
/// from the initial state reproduces the submission exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    BoxDrawn {
        frame_index: u32,
        x: i64,
        y: i64,
        width: i64,
        height: i64,
        #[serde(default = "default_category")]
        category: Category,
    },
    BoxMoved {
        frame_index: u32,
        box_id: BoxId,
        x: i64,
        y: i64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<i64>,
    },
    BoxDeleted {
        frame_index: u32,
        box_id: BoxId,
    },
    BoxReclassified {
        frame_index: u32,
        box_id: BoxId,
        category: Category,
    },
    /// Navigation to `to`. `populated` holds the boxes created by
    /// propagation, which only happens on the first forward visit.
    FrameVisited {
        from: u32,
        to: u32,
        #[serde(default)]
        propagated: bool,
        #[serde(default)]
        populated: Vec<BoundingBox>,
    },
    Undo {
        frame_index: u32,
    },
    TimeTick {
        frame_index: u32,
        active_seconds: f64,
    },
    Submit,
    Delete,
}

fn default_category() -> Category {
    Category::Animal
}

impl EventKind {
    /// Kinds the server records on its own; clients may not send them.
    pub fn is_server_only(&self) -> bool {
        matches!(
            self,
            EventKind::FrameVisited { .. } | EventKind::Submit | EventKind::Delete
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionEvent {
    pub sequence_no: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// One labeler's (or reviewer's) work on a video segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub submission_id: SubmissionId,
    pub video_id: String,
    pub video_segment_id: String,
    pub labeler_id: AccountId,
    pub mode: Mode,
    pub reviewed_submission_id: Option<SubmissionId>,
    pub first_frame: u32,
    pub last_frame: u32,
    pub frame_width: u32,
    pub frame_height: u32,
    pub min_box_size: u32,
    pub frames: BTreeMap<u32, Vec<BoundingBox>>,
    pub visited: BTreeSet<u32>,
    /// Box list of each frame as it was when the current visit began.
    pub entry_snapshots: BTreeMap<u32, Vec<BoundingBox>>,
    pub status: SubmissionStatus,
    pub submitted_at: Option<DateTime<Utc>>,
    pub time_log: Vec<TimeEntry>,
    pub next_box_id: u64,
    pub last_sequence_no: Option<u64>,
}

impl Submission {
    /// Fresh labeling submission positioned on the segment's first frame.
    pub fn new_label(
        submission_id: SubmissionId,
        segment: &VideoSegment,
        labeler_id: AccountId,
        frame_width: u32,
        frame_height: u32,
        min_box_size: u32,
    ) -> Self {
        let first = segment.first_frame;
        Submission {
            submission_id,
            video_id: segment.video_id.clone(),
            video_segment_id: segment.segment_id.clone(),
            labeler_id,
            mode: Mode::Label,
            reviewed_submission_id: None,
            first_frame: first,
            last_frame: segment.last_frame,
            frame_width,
            frame_height,
            min_box_size,
            frames: BTreeMap::new(),
            visited: BTreeSet::from([first]),
            entry_snapshots: BTreeMap::from([(first, Vec::new())]),
            status: SubmissionStatus::InProgress,
            submitted_at: None,
            time_log: Vec::new(),
            next_box_id: 1,
            last_sequence_no: None,
        }
    }

    /// Review submission seeded with the boxes of a submitted label pass.
    pub fn new_review(
        submission_id: SubmissionId,
        reviewer_id: AccountId,
        original: &Submission,
    ) -> Result<Self, WorkflowError> {
        if original.mode != Mode::Label {
            return Err(WorkflowError::Integrity(format!(
                "{} is a review and cannot itself be reviewed",
                original.submission_id
            )));
        }
        if original.status != SubmissionStatus::Submitted {
            return Err(WorkflowError::State(format!(
                "{} has not been submitted",
                original.submission_id
            )));
        }
        if original.labeler_id == reviewer_id {
            return Err(WorkflowError::Integrity(
                "a labeler cannot review their own submission".into(),
            ));
        }
        let first = original.first_frame;
        Ok(Submission {
            submission_id,
            video_id: original.video_id.clone(),
            video_segment_id: original.video_segment_id.clone(),
            labeler_id: reviewer_id,
            mode: Mode::Review,
            reviewed_submission_id: Some(original.submission_id.clone()),
            first_frame: first,
            last_frame: original.last_frame,
            frame_width: original.frame_width,
            frame_height: original.frame_height,
            min_box_size: original.min_box_size,
            frames: original.frames.clone(),
            visited: BTreeSet::from([first]),
            entry_snapshots: BTreeMap::from([(first, original.frame_boxes(first).to_vec())]),
            status: SubmissionStatus::InProgress,
            submitted_at: None,
            time_log: Vec::new(),
            next_box_id: original.next_box_id,
            last_sequence_no: None,
        })
    }

    pub fn frame_boxes(&self, frame: u32) -> &[BoundingBox] {
        self.frames.get(&frame).map_or(&[], |v| v.as_slice())
    }

    pub fn box_count(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn all_boxes(&self) -> impl Iterator<Item = &BoundingBox> {
        self.frames.values().flatten()
    }

    pub fn active_seconds(&self) -> f64 {
        self.time_log.iter().map(|t| t.active_seconds).sum()
    }

    pub fn next_sequence_no(&self) -> u64 {
        self.last_sequence_no.map_or(0, |s| s + 1)
    }

    fn require_in_progress(&self) -> Result<(), WorkflowError> {
        match self.status {
            SubmissionStatus::InProgress => Ok(()),
            s => Err(WorkflowError::State(format!(
                "submission {} is {s:?}",
                self.submission_id
            ))),
        }
    }

    fn require_frame(&self, frame: u32) -> Result<(), WorkflowError> {
        if frame < self.first_frame || frame > self.last_frame {
            return Err(WorkflowError::Domain(format!(
                "frame {frame} outside segment [{}, {}]",
                self.first_frame, self.last_frame
            )));
        }
        Ok(())
    }

    fn require_visited(&self, frame: u32) -> Result<(), WorkflowError> {
        self.require_frame(frame)?;
        if !self.visited.contains(&frame) {
            return Err(WorkflowError::Domain(format!("frame {frame} has not been visited")));
        }
        Ok(())
    }

    /// True when moving `from -> to` would populate `to` by propagation.
    pub fn propagates_on(&self, from: u32, to: u32) -> bool {
        self.mode == Mode::Label && to == from + 1 && !self.visited.contains(&to)
    }

    /// Builds the navigation event for `from -> to`. The tracker only runs
    /// on a first forward visit in label mode; `next_frame` must then be
    /// supplied when `tracker_enabled` is set.
    pub fn plan_advance(
        &self,
        from: u32,
        to: u32,
        tracker_enabled: bool,
        cfg: &TrackerConfig,
        next_frame: Option<&FrameImage>,
    ) -> Result<EventKind, WorkflowError> {
        self.require_in_progress()?;
        self.require_frame(from)?;
        self.require_frame(to)?;
        let propagated = self.propagates_on(from, to);
        let populated = if !propagated {
            Vec::new()
        } else if tracker_enabled {
            let frame = next_frame.ok_or_else(|| {
                WorkflowError::Domain(format!("frame {to} image required for tracking"))
            })?;
            if frame.frame_index != to {
                return Err(WorkflowError::Domain(format!(
                    "frame image {} supplied for frame {to}",
                    frame.frame_index
                )));
            }
            track_boxes(self.frame_boxes(from), frame, cfg)?
        } else {
            copy_boxes(self.frame_boxes(from))
        };
        Ok(EventKind::FrameVisited {
            from,
            to,
            propagated,
            populated,
        })
    }

    /// Moves from `from` to `to`, propagating boxes on a first forward visit.
    /// Returns the number of boxes created.
    pub fn advance_frame(
        &mut self,
        from: u32,
        to: u32,
        tracker_enabled: bool,
        cfg: &TrackerConfig,
        next_frame: Option<&FrameImage>,
    ) -> Result<usize, WorkflowError> {
        let event = self.plan_advance(from, to, tracker_enabled, cfg, next_frame)?;
        self.apply_kind(&event)?;
        Ok(match event {
            EventKind::FrameVisited { populated, .. } => populated.len(),
            _ => 0,
        })
    }

    /// Restores `frame` to its state at the start of the current visit.
    pub fn undo_frame(&mut self, frame: u32) -> Result<(), WorkflowError> {
        self.apply_kind(&EventKind::Undo { frame_index: frame })
    }

    /// Discards all work. Terminal.
    pub fn delete_progress(&mut self) -> Result<(), WorkflowError> {
        self.apply_kind(&EventKind::Delete)
    }

    /// Freezes the submission. Terminal.
    pub fn submit(&mut self, at: DateTime<Utc>) -> Result<(), WorkflowError> {
        self.require_in_progress()?;
        self.apply_kind(&EventKind::Submit)?;
        self.submitted_at = Some(at);
        Ok(())
    }

    /// Applies a logged event, enforcing dense sequence numbers.
    pub fn apply(&mut self, event: &SubmissionEvent) -> Result<(), WorkflowError> {
        let expected = self.next_sequence_no();
        if event.sequence_no != expected {
            return Err(WorkflowError::Conflict {
                expected,
                got: event.sequence_no,
            });
        }
        self.apply_kind(&event.kind)?;
        if matches!(event.kind, EventKind::Submit) {
            self.submitted_at = Some(event.timestamp);
        }
        self.last_sequence_no = Some(event.sequence_no);
        Ok(())
    }

    fn edited_origin(&self, current: Origin) -> Origin {
        match self.mode {
            Mode::Review => Origin::ReviewEdited,
            Mode::Label => current,
        }
    }

    fn find_box_mut(&mut self, frame: u32, id: BoxId) -> Result<&mut BoundingBox, WorkflowError> {
        self.frames
            .get_mut(&frame)
            .and_then(|v| v.iter_mut().find(|b| b.box_id == id))
            .ok_or_else(|| WorkflowError::Domain(format!("no box {id} on frame {frame}")))
    }

    /// Applies an event body without sequence bookkeeping.
    pub fn apply_kind(&mut self, kind: &EventKind) -> Result<(), WorkflowError> {
        self.require_in_progress()?;
        match kind {
            EventKind::BoxDrawn {
                frame_index,
                x,
                y,
                width,
                height,
                category,
            } => {
                self.require_visited(*frame_index)?;
                let raw = BoundingBox {
                    box_id: BoxId(self.next_box_id),
                    frame_index: *frame_index,
                    x: *x,
                    y: *y,
                    width: *width,
                    height: *height,
                    category: *category,
                    origin: Origin::Drawn,
                    author_id: self.labeler_id.clone(),
                };
                let clamped = clamp_and_filter(&raw, self.frame_width, self.frame_height, self.min_box_size)
                    .ok_or_else(|| {
                        WorkflowError::Rejected(format!(
                            "{width}x{height} box at ({x}, {y}) is below {} px after clipping",
                            self.min_box_size
                        ))
                    })?;
                self.next_box_id += 1;
                self.frames.entry(*frame_index).or_default().push(clamped);
            }
            EventKind::BoxMoved {
                frame_index,
                box_id,
                x,
                y,
                width,
                height,
            } => {
                self.require_visited(*frame_index)?;
                let (fw, fh, min) = (self.frame_width, self.frame_height, self.min_box_size);
                let current = self.find_box_mut(*frame_index, *box_id)?.clone();
                let moved = BoundingBox {
                    x: *x,
                    y: *y,
                    width: width.unwrap_or(current.width),
                    height: height.unwrap_or(current.height),
                    origin: self.edited_origin(current.origin),
                    ..current
                };
                let clamped = clamp_and_filter(&moved, fw, fh, min).ok_or_else(|| {
                    WorkflowError::Rejected(format!("moving box {box_id} leaves less than {min} px"))
                })?;
                *self.find_box_mut(*frame_index, *box_id)? = clamped;
            }
            EventKind::BoxDeleted {
                frame_index,
                box_id,
            } => {
                self.require_visited(*frame_index)?;
                self.find_box_mut(*frame_index, *box_id)?;
                let boxes = self.frames.get_mut(frame_index).expect("box found above");
                boxes.retain(|b| b.box_id != *box_id);
            }
            EventKind::BoxReclassified {
                frame_index,
                box_id,
                category,
            } => {
                self.require_visited(*frame_index)?;
                let mode = self.mode;
                let b = self.find_box_mut(*frame_index, *box_id)?;
                b.category = *category;
                if mode == Mode::Review {
                    b.origin = Origin::ReviewEdited;
                }
            }
            EventKind::FrameVisited {
                from,
                to,
                propagated,
                populated,
            } => {
                self.require_frame(*from)?;
                self.require_frame(*to)?;
                if *propagated {
                    if !self.propagates_on(*from, *to) {
                        return Err(WorkflowError::Integrity(format!(
                            "frame {to} cannot be populated from {from}"
                        )));
                    }
                    if populated.iter().any(|b| b.frame_index != *to) {
                        return Err(WorkflowError::Integrity(format!(
                            "propagated boxes do not belong to frame {to}"
                        )));
                    }
                    self.frames.insert(*to, populated.clone());
                } else if !populated.is_empty() {
                    return Err(WorkflowError::Integrity(
                        "boxes supplied for a navigation without propagation".into(),
                    ));
                }
                self.visited.insert(*to);
                self.entry_snapshots
                    .insert(*to, self.frame_boxes(*to).to_vec());
            }
            EventKind::Undo { frame_index } => {
                self.require_visited(*frame_index)?;
                let snapshot = self
                    .entry_snapshots
                    .get(frame_index)
                    .cloned()
                    .unwrap_or_default();
                if snapshot.is_empty() {
                    self.frames.remove(frame_index);
                } else {
                    self.frames.insert(*frame_index, snapshot);
                }
            }
            EventKind::TimeTick {
                frame_index,
                active_seconds,
            } => {
                self.require_frame(*frame_index)?;
                if !active_seconds.is_finite() || *active_seconds < 0.0 {
                    return Err(WorkflowError::Domain(format!(
                        "active seconds must be a non-negative number, got {active_seconds}"
                    )));
                }
                self.time_log.push(TimeEntry {
                    frame_index: *frame_index,
                    active_seconds: *active_seconds,
                });
            }
            EventKind::Submit => {
                self.status = SubmissionStatus::Submitted;
            }
            EventKind::Delete => {
                self.frames.clear();
                self.entry_snapshots.clear();
                self.visited.clear();
                self.status = SubmissionStatus::Deleted;
            }
        }
        Ok(())
    }
}
