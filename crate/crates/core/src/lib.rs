//! Collaborative labeling of objects in thermal UAV frame sequences.
//!
//! The crate covers box geometry, the brightness-threshold tracker used to
//! carry boxes between frames, the labeling workflow and its event log,
//! consensus (quorum vote or label-then-review), efficiency analytics, an
//! on-disk store, the HTTP service and the operator CLI.

pub mod analytics;
pub mod api;
pub mod cli;
pub mod consensus;
pub mod geometry;
pub mod pipeline;
pub mod tracker;
pub mod workflow;
pub mod store;
