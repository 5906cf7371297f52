//! Line-delimited JSON event log for one submission.
//!
//! `base.json` holds the submission as created; `events.jsonl` holds one
//! event per line. The current state is the fold of the events over the
//! base. Appends are synced to disk before they are acknowledged.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::StoreError;
use crate::workflow::{Submission, SubmissionEvent};

pub struct EventLog {
    dir: PathBuf,
}

impl EventLog {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        EventLog { dir: dir.into() }
    }

    fn base_path(&self) -> PathBuf {
        self.dir.join("base.json")
    }

    fn events_path(&self) -> PathBuf {
        self.dir.join("events.jsonl")
    }

    pub fn exists(&self) -> bool {
        self.base_path().exists()
    }

    pub fn create(&self, base: &Submission) -> Result<(), StoreError> {
        fs::create_dir_all(&self.dir)?;
        if self.exists() {
            return Err(StoreError::Conflict(format!(
                "submission {} already exists",
                base.submission_id
            )));
        }
        write_atomic(&self.base_path(), &serde_json::to_vec_pretty(base)?)?;
        File::create(self.events_path())?.sync_all()?;
        Ok(())
    }

    pub fn base(&self) -> Result<Submission, StoreError> {
        let bytes = fs::read(self.base_path())?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// All complete events in order. A torn final line (no newline, not
    /// parseable) was never acknowledged and is skipped.
    pub fn events(&self) -> Result<Vec<SubmissionEvent>, StoreError> {
        let file = match File::open(self.events_path()) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            let complete = line.ends_with('\n');
            match serde_json::from_str::<SubmissionEvent>(line.trim_end()) {
                Ok(ev) => out.push(ev),
                Err(_) if !complete => break,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(out)
    }

    /// Folds the log over the base state.
    pub fn replay(&self) -> Result<Submission, StoreError> {
        let mut sub = self.base()?;
        for ev in self.events()? {
            sub.apply(&ev)?;
        }
        Ok(sub)
    }

    /// Appends `events` in one write and syncs.
    pub fn append(&self, events: &[SubmissionEvent]) -> Result<(), StoreError> {
        let mut buf = Vec::new();
        for ev in events {
            serde_json::to_writer(&mut buf, ev)?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().append(true).create(true).open(self.events_path())?;
        f.write_all(&buf)?;
        f.sync_data()?;
        Ok(())
    }
}

/// Writes through a temporary file and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
