use serde::{Deserialize, Serialize};

use super::WorkflowError;

/// Contiguous frame range handed out as one unit of work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoSegment {
    pub segment_id: String,
    pub video_id: String,
    pub first_frame: u32,
    pub last_frame: u32,
    /// Context left by the labelers of the previous segment.
    #[serde(default)]
    pub predecessor_note: String,
}

impl VideoSegment {
    pub fn frame_count(&self) -> u32 {
        self.last_frame - self.first_frame + 1
    }

    pub fn contains(&self, frame: u32) -> bool {
        (self.first_frame..=self.last_frame).contains(&frame)
    }
}

/// Cuts `frame_count` frames into consecutive segments of
/// `max_frames_per_segment` (the last one may be shorter).
pub fn split_video(
    video_id: &str,
    frame_count: u32,
    max_frames_per_segment: u32,
) -> Result<Vec<VideoSegment>, WorkflowError> {
    if max_frames_per_segment == 0 {
        return Err(WorkflowError::Config(
            "max frames per segment must be at least 1".into(),
        ));
    }
    if frame_count == 0 {
        return Err(WorkflowError::Domain(format!("video {video_id} has no frames")));
    }
    Ok((0..frame_count)
        .step_by(max_frames_per_segment as usize)
        .enumerate()
        .map(|(k, first)| VideoSegment {
            segment_id: format!("{video_id}-s{k:03}"),
            video_id: video_id.to_string(),
            first_frame: first,
            last_frame: (first + max_frames_per_segment - 1).min(frame_count - 1),
            predecessor_note: String::new(),
        })
        .collect())
}
