//! Submission lifecycle, first-visit propagation, undo/submit/delete
//! semantics, video segmentation and assignment distribution.

mod assignment;
mod segment;
mod submission;

pub use assignment::{
    assignments_to_csv, create_assignments, Assignment, AssignmentRole, AssignmentStatus,
    Framework, ASSIGNMENT_CSV_HEADER,
};
pub use segment::{split_video, VideoSegment};
pub use submission::{
    EventKind, Mode, Submission, SubmissionEvent, SubmissionId, SubmissionStatus, TimeEntry,
};

use thiserror::Error;

use crate::tracker::TrackerError;

#[derive(Debug, Error, PartialEq)]
pub enum WorkflowError {
    /// The submission is in a state that forbids the operation.
    #[error("state error: {0}")]
    State(String),
    /// Out-of-range frames, unknown boxes and similar bad references.
    #[error("{0}")]
    Domain(String),
    #[error("box rejected: {0}")]
    Rejected(String),
    #[error("sequence conflict: expected {expected}, got {got}")]
    Conflict { expected: u64, got: u64 },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
}
