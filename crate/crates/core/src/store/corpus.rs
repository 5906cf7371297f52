//! Read-only frame corpus: `videos/<id>/frames/frame_NNNNNN.png` plus
//! `videos/<id>/meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::tracker::FrameImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub frame_count: u32,
    pub fps: f64,
    /// Black-hot footage; frames are inverted before tracking.
    pub polarity_inverted: bool,
    pub width: u32,
    pub height: u32,
}

pub fn frame_file_name(n: u32) -> String {
    format!("frame_{n:06}.png")
}

/// Parses `frame_NNNNNN.png`.
pub fn parse_frame_file_name(name: &str) -> Option<u32> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.len() != 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub fn valid_video_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub struct Corpus {
    root: PathBuf,
}

impl Corpus {
    pub fn new(data_root: &Path) -> Self {
        Corpus {
            root: data_root.join("videos"),
        }
    }

    pub fn video_dir(&self, video_id: &str) -> PathBuf {
        self.root.join(video_id)
    }

    pub fn frame_path(&self, video_id: &str, n: u32) -> PathBuf {
        self.video_dir(video_id).join("frames").join(frame_file_name(n))
    }

    pub fn meta(&self, video_id: &str) -> Result<VideoMeta, StoreError> {
        if !valid_video_id(video_id) {
            return Err(StoreError::NotFound(format!("video {video_id}")));
        }
        let path = self.video_dir(video_id).join("meta.json");
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StoreError::NotFound(format!("video {video_id}")),
            _ => e.into(),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn list(&self) -> Result<Vec<VideoMeta>, StoreError> {
        let mut out = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.file_type()?.is_dir() && entry.path().join("meta.json").exists() {
                out.push(self.meta(&name)?);
            }
        }
        out.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        Ok(out)
    }

    /// Stored PNG bytes of frame `n`.
    pub fn frame_bytes(&self, video_id: &str, n: u32) -> Result<Vec<u8>, StoreError> {
        let meta = self.meta(video_id)?;
        if n >= meta.frame_count {
            return Err(StoreError::NotFound(format!(
                "frame {n} of {video_id} (has {})",
                meta.frame_count
            )));
        }
        Ok(fs::read(self.frame_path(video_id, n))?)
    }

    /// Decoded frame, flipped to white-hot when the video is black-hot.
    pub fn frame_image(&self, video_id: &str, n: u32) -> Result<FrameImage, StoreError> {
        let meta = self.meta(video_id)?;
        let bytes = self.frame_bytes(video_id, n)?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| StoreError::Internal(format!("frame {n} of {video_id}: {e}")))?
            .into_luma8();
        let (w, h) = img.dimensions();
        let frame = FrameImage::new(w, h, img.into_raw(), n)
            .map_err(|e| StoreError::Internal(e.to_string()))?;
        Ok(if meta.polarity_inverted {
            frame.inverted()
        } else {
            frame
        })
    }
}
