//! On-disk persistence: accounts and sessions, the frame corpus, segment
//! and assignment tables, append-only submission logs and final labels.
//!
//! Layout under the data root:
//!
//! ```text
//! accounts.json
//! segments.json
//! assignments.json
//! videos/<video_id>/meta.json
//! videos/<video_id>/frames/frame_000000.png
//! submissions/<submission_id>/base.json
//! submissions/<submission_id>/events.jsonl
//! finals/<segment_id>.json
//! ```

mod accounts;
mod corpus;
mod eventlog;

pub use accounts::{
    hash_password, verify_password, AccountInfo, AccountRole, Actor, SessionManager, UserAccount,
    DEFAULT_SESSION_IDLE_HOURS,
};
pub use corpus::{frame_file_name, parse_frame_file_name, valid_video_id, Corpus, VideoMeta};
pub use eventlog::{write_atomic, EventLog};

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};

use chrono::{DateTime, Duration, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::FinalLabel;
use crate::geometry::{AccountId, BoundingBox, DEFAULT_MIN_BOX_SIZE};
use crate::tracker::TrackerConfig;
use crate::workflow::{
    Assignment, EventKind, Framework, Mode, Submission, SubmissionEvent, SubmissionId,
    SubmissionStatus, VideoSegment, WorkflowError,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("authentication failed: {0}")]
    Unauthorized(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed stored data: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Internal(String),
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub session_idle_timeout: Duration,
    pub min_box_size: u32,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            session_idle_timeout: Duration::hours(DEFAULT_SESSION_IDLE_HOURS),
            min_box_size: DEFAULT_MIN_BOX_SIZE,
        }
    }
}

/// Listing entry for the review picker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionSummary {
    pub submission_id: SubmissionId,
    pub video_id: String,
    pub video_segment_id: String,
    pub labeler_id: AccountId,
    pub mode: Mode,
    pub status: SubmissionStatus,
    pub reviewed_submission_id: Option<SubmissionId>,
    pub box_count: usize,
    pub submitted_at: Option<DateTime<Utc>>,
}

impl From<&Submission> for SubmissionSummary {
    fn from(s: &Submission) -> Self {
        SubmissionSummary {
            submission_id: s.submission_id.clone(),
            video_id: s.video_id.clone(),
            video_segment_id: s.video_segment_id.clone(),
            labeler_id: s.labeler_id.clone(),
            mode: s.mode,
            status: s.status,
            reviewed_submission_id: s.reviewed_submission_id.clone(),
            box_count: s.box_count(),
            submitted_at: s.submitted_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSubmission {
    pub mode: Mode,
    pub segment: String,
    #[serde(default)]
    pub reviewed_submission_id: Option<SubmissionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceOutcome {
    pub sequence_no: u64,
    pub created: usize,
    pub boxes: Vec<BoundingBox>,
}

/// Final labels of one segment with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSet {
    pub segment_id: String,
    pub video_id: String,
    pub framework: Framework,
    pub source_submissions: Vec<SubmissionId>,
    pub labels: Vec<FinalLabel>,
}

type SubmissionCell = Arc<Mutex<Submission>>;

pub struct Store {
    root: PathBuf,
    config: StoreConfig,
    corpus: Corpus,
    accounts: Mutex<()>,
    sessions: Mutex<SessionManager>,
    tables: Mutex<()>,
    submissions: Mutex<HashMap<SubmissionId, SubmissionCell>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn read_json_or_default<T: DeserializeOwned + Default>(path: &Path) -> Result<T, StoreError> {
    match fs::read(path) {
        Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(T::default()),
        Err(e) => Err(e.into()),
    }
}

fn valid_plain_id(id: &str) -> bool {
    valid_video_id(id)
}

impl Store {
    pub fn open(root: impl Into<PathBuf>, config: StoreConfig) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("videos"))?;
        fs::create_dir_all(root.join("submissions"))?;
        fs::create_dir_all(root.join("finals"))?;
        Ok(Store {
            corpus: Corpus::new(&root),
            sessions: Mutex::new(SessionManager::new(config.session_idle_timeout)),
            root,
            config,
            accounts: Mutex::new(()),
            tables: Mutex::new(()),
            submissions: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    // ---- accounts and sessions ----

    fn accounts_path(&self) -> PathBuf {
        self.root.join("accounts.json")
    }

    fn read_accounts(&self) -> Result<Vec<UserAccount>, StoreError> {
        read_json_or_default(&self.accounts_path())
    }

    pub fn add_user(&self, username: &str, password: &str, role: AccountRole) -> Result<AccountInfo, StoreError> {
        if !valid_plain_id(username) {
            return Err(StoreError::Validation(format!(
                "username {username:?} must be 1-64 letters, digits, '-' or '_'"
            )));
        }
        if password.is_empty() {
            return Err(StoreError::Validation("password must not be empty".into()));
        }
        let _guard = lock(&self.accounts);
        let mut accounts = self.read_accounts()?;
        if accounts.iter().any(|a| a.username == username) {
            return Err(StoreError::Conflict(format!("username {username} is taken")));
        }
        let account = UserAccount {
            account_id: AccountId::new(username),
            username: username.to_string(),
            password_hash: hash_password(password)?,
            role,
        };
        let info = AccountInfo::from(&account);
        accounts.push(account);
        write_atomic(&self.accounts_path(), &serde_json::to_vec_pretty(&accounts)?)?;
        Ok(info)
    }

    pub fn remove_user(&self, username: &str) -> Result<(), StoreError> {
        let _guard = lock(&self.accounts);
        let mut accounts = self.read_accounts()?;
        let before = accounts.len();
        accounts.retain(|a| a.username != username);
        if accounts.len() == before {
            return Err(StoreError::NotFound(format!("user {username}")));
        }
        write_atomic(&self.accounts_path(), &serde_json::to_vec_pretty(&accounts)?)?;
        lock(&self.sessions).revoke_account(&AccountId::new(username));
        Ok(())
    }

    pub fn list_accounts(&self) -> Result<Vec<AccountInfo>, StoreError> {
        Ok(self.read_accounts()?.iter().map(AccountInfo::from).collect())
    }

    /// Checks credentials and opens a session. Unknown users and wrong
    /// passwords fail identically.
    pub fn login(&self, username: &str, password: &str) -> Result<(String, AccountInfo), StoreError> {
        self.login_at(username, password, Utc::now())
    }

    pub fn login_at(
        &self,
        username: &str,
        password: &str,
        now: DateTime<Utc>,
    ) -> Result<(String, AccountInfo), StoreError> {
        let accounts = self.read_accounts()?;
        let account = accounts.iter().find(|a| a.username == username);
        // burn the same hashing work when the user does not exist
        let hash = account.map_or(dummy_hash(), |a| a.password_hash.as_str());
        let ok = verify_password(password, hash) && account.is_some();
        let Some(account) = account.filter(|_| ok) else {
            return Err(StoreError::Unauthorized("invalid username or password".into()));
        };
        let actor = Actor {
            account_id: account.account_id.clone(),
            role: account.role,
        };
        let token = lock(&self.sessions).open(actor, now);
        Ok((token, AccountInfo::from(account)))
    }

    pub fn session(&self, token: &str) -> Result<Actor, StoreError> {
        self.session_at(token, Utc::now())
    }

    pub fn session_at(&self, token: &str, now: DateTime<Utc>) -> Result<Actor, StoreError> {
        lock(&self.sessions).validate(token, now)
    }

    // ---- corpus ----

    pub fn list_videos(&self) -> Result<Vec<VideoMeta>, StoreError> {
        self.corpus.list()
    }

    pub fn video_meta(&self, video_id: &str) -> Result<VideoMeta, StoreError> {
        self.corpus.meta(video_id)
    }

    pub fn frame_bytes(&self, video_id: &str, n: u32) -> Result<Vec<u8>, StoreError> {
        self.corpus.frame_bytes(video_id, n)
    }

    // ---- segments and assignments ----

    pub fn segments(&self) -> Result<Vec<VideoSegment>, StoreError> {
        read_json_or_default(&self.root.join("segments.json"))
    }

    pub fn segment(&self, segment_id: &str) -> Result<VideoSegment, StoreError> {
        self.segments()?
            .into_iter()
            .find(|s| s.segment_id == segment_id)
            .ok_or_else(|| StoreError::NotFound(format!("segment {segment_id}")))
    }

    /// Registers segments, replacing any with the same id.
    pub fn put_segments(&self, new: &[VideoSegment]) -> Result<(), StoreError> {
        let _guard = lock(&self.tables);
        let mut all = self.segments()?;
        for seg in new {
            match all.iter_mut().find(|s| s.segment_id == seg.segment_id) {
                Some(existing) => *existing = seg.clone(),
                None => all.push(seg.clone()),
            }
        }
        write_atomic(&self.root.join("segments.json"), &serde_json::to_vec_pretty(&all)?)
    }

    pub fn assignments(&self) -> Result<Vec<Assignment>, StoreError> {
        read_json_or_default(&self.root.join("assignments.json"))
    }

    pub fn put_assignments(&self, assignments: &[Assignment]) -> Result<(), StoreError> {
        let _guard = lock(&self.tables);
        let mut all = self.assignments()?;
        for a in assignments {
            match all.iter_mut().find(|x| x.assignment_id == a.assignment_id) {
                Some(existing) => *existing = a.clone(),
                None => all.push(a.clone()),
            }
        }
        write_atomic(&self.root.join("assignments.json"), &serde_json::to_vec_pretty(&all)?)
    }

    // ---- submissions ----

    fn log(&self, id: &SubmissionId) -> Result<EventLog, StoreError> {
        if !valid_plain_id(id.as_str()) {
            return Err(StoreError::NotFound(format!("submission {id}")));
        }
        Ok(EventLog::new(self.root.join("submissions").join(id.as_str())))
    }

    fn cell(&self, id: &SubmissionId) -> Result<SubmissionCell, StoreError> {
        let mut cache = lock(&self.submissions);
        if let Some(c) = cache.get(id) {
            return Ok(c.clone());
        }
        let log = self.log(id)?;
        if !log.exists() {
            return Err(StoreError::NotFound(format!("submission {id}")));
        }
        let cell = Arc::new(Mutex::new(log.replay()?));
        cache.insert(id.clone(), cell.clone());
        Ok(cell)
    }

    /// Current state of a submission.
    pub fn submission(&self, id: &SubmissionId) -> Result<Submission, StoreError> {
        let cell = self.cell(id)?;
        let sub = lock(&cell).clone();
        Ok(sub)
    }

    /// Rebuilds a submission from its log on disk, bypassing the cache.
    pub fn load_submission(&self, id: &SubmissionId) -> Result<Submission, StoreError> {
        let log = self.log(id)?;
        if !log.exists() {
            return Err(StoreError::NotFound(format!("submission {id}")));
        }
        log.replay()
    }

    pub fn submission_ids(&self) -> Result<Vec<SubmissionId>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join("submissions"))? {
            let entry = entry?;
            if entry.path().join("base.json").exists() {
                ids.push(SubmissionId::new(entry.file_name().to_string_lossy()));
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn submissions(&self) -> Result<Vec<Submission>, StoreError> {
        self.submission_ids()?
            .iter()
            .map(|id| self.submission(id))
            .collect()
    }

    pub fn list_submissions(&self, video_id: &str) -> Result<Vec<SubmissionSummary>, StoreError> {
        self.video_meta(video_id)?;
        Ok(self
            .submissions()?
            .iter()
            .filter(|s| s.video_id == video_id)
            .map(SubmissionSummary::from)
            .collect())
    }

    fn new_submission_id(&self) -> Result<(SubmissionId, EventLog), StoreError> {
        let base = self.root.join("submissions");
        let mut n = self.submission_ids()?.len();
        loop {
            let id = SubmissionId::new(format!("sub-{n:06}"));
            match fs::create_dir(base.join(id.as_str())) {
                Ok(()) => {
                    let log = self.log(&id)?;
                    return Ok((id, log));
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn create_submission(&self, actor: &Actor, req: &NewSubmission) -> Result<Submission, StoreError> {
        let segment = self.segment(&req.segment)?;
        let meta = self.video_meta(&segment.video_id)?;
        let base = match req.mode {
            Mode::Label => {
                if req.reviewed_submission_id.is_some() {
                    return Err(StoreError::Validation(
                        "a label submission cannot reference another submission".into(),
                    ));
                }
                let (id, log) = self.new_submission_id()?;
                let s = Submission::new_label(
                    id,
                    &segment,
                    actor.account_id.clone(),
                    meta.width,
                    meta.height,
                    self.config.min_box_size,
                );
                log.create(&s)?;
                s
            }
            Mode::Review => {
                let reviewed = req.reviewed_submission_id.as_ref().ok_or_else(|| {
                    StoreError::Validation("review mode needs reviewed_submission_id".into())
                })?;
                let original = self.submission(reviewed)?;
                if original.video_segment_id != segment.segment_id {
                    return Err(StoreError::Validation(format!(
                        "{reviewed} belongs to {}, not {}",
                        original.video_segment_id, segment.segment_id
                    )));
                }
                // validate before allocating an id
                Submission::new_review(SubmissionId::new("pending"), actor.account_id.clone(), &original)?;
                let (id, log) = self.new_submission_id()?;
                let s = Submission::new_review(id, actor.account_id.clone(), &original)?;
                log.create(&s)?;
                s
            }
        };
        lock(&self.submissions).insert(base.submission_id.clone(), Arc::new(Mutex::new(base.clone())));
        Ok(base)
    }

    fn authorize(actor: &Actor, sub: &Submission) -> Result<(), StoreError> {
        if actor.is_admin() || actor.account_id == sub.labeler_id {
            Ok(())
        } else {
            Err(StoreError::Forbidden(format!(
                "{} does not own {}",
                actor.account_id, sub.submission_id
            )))
        }
    }

    /// Applies a batch of client events. The batch is validated as a whole
    /// against a copy of the state, written durably, then published.
    pub fn append_events(
        &self,
        actor: &Actor,
        id: &SubmissionId,
        events: &[SubmissionEvent],
    ) -> Result<u64, StoreError> {
        if let Some(ev) = events.iter().find(|e| e.kind.is_server_only()) {
            return Err(StoreError::Validation(format!(
                "event {} may only be recorded by the server",
                ev.sequence_no
            )));
        }
        self.commit(actor, id, events)
    }

    fn commit(&self, actor: &Actor, id: &SubmissionId, events: &[SubmissionEvent]) -> Result<u64, StoreError> {
        let cell = self.cell(id)?;
        let mut current = lock(&cell);
        Self::authorize(actor, &current)?;
        let mut next = current.clone();
        for ev in events {
            next.apply(ev)?;
        }
        if events.is_empty() {
            return Ok(current.last_sequence_no.unwrap_or(0));
        }
        self.log(id)?.append(events)?;
        *current = next;
        Ok(current.last_sequence_no.expect("events were applied"))
    }

    fn commit_server_event(&self, actor: &Actor, id: &SubmissionId, kind: EventKind) -> Result<u64, StoreError> {
        let seq = self.submission(id)?.next_sequence_no();
        let ev = SubmissionEvent {
            sequence_no: seq,
            timestamp: Utc::now(),
            kind,
        };
        self.commit(actor, id, &[ev])
    }

    /// Navigates `from -> to`, running propagation (tracked or copied) on
    /// a first forward visit in label mode.
    pub fn advance(
        &self,
        actor: &Actor,
        id: &SubmissionId,
        from: u32,
        to: u32,
        tracker_enabled: bool,
        cfg: &TrackerConfig,
    ) -> Result<AdvanceOutcome, StoreError> {
        let cell = self.cell(id)?;
        let mut current = lock(&cell);
        Self::authorize(actor, &current)?;
        let frame = if tracker_enabled && current.propagates_on(from, to) {
            Some(self.corpus.frame_image(&current.video_id, to)?)
        } else {
            None
        };
        let kind = current.plan_advance(from, to, tracker_enabled, cfg, frame.as_ref())?;
        let created = match &kind {
            EventKind::FrameVisited { populated, .. } => populated.len(),
            _ => 0,
        };
        let ev = SubmissionEvent {
            sequence_no: current.next_sequence_no(),
            timestamp: Utc::now(),
            kind,
        };
        let mut next = current.clone();
        next.apply(&ev)?;
        self.log(id)?.append(std::slice::from_ref(&ev))?;
        *current = next;
        Ok(AdvanceOutcome {
            sequence_no: ev.sequence_no,
            created,
            boxes: current.frame_boxes(to).to_vec(),
        })
    }

    pub fn submit(&self, actor: &Actor, id: &SubmissionId, confirmed: bool) -> Result<Submission, StoreError> {
        if !confirmed {
            return Err(StoreError::Validation("submitting requires confirmation".into()));
        }
        self.commit_server_event(actor, id, EventKind::Submit)?;
        self.submission(id)
    }

    pub fn delete(&self, actor: &Actor, id: &SubmissionId, confirmed: bool) -> Result<Submission, StoreError> {
        if !confirmed {
            return Err(StoreError::Validation("deleting progress requires confirmation".into()));
        }
        self.commit_server_event(actor, id, EventKind::Delete)?;
        self.submission(id)
    }

    // ---- final labels ----

    fn finals_path(&self, segment_id: &str) -> Result<PathBuf, StoreError> {
        if !valid_plain_id(segment_id) {
            return Err(StoreError::NotFound(format!("segment {segment_id}")));
        }
        Ok(self.root.join("finals").join(format!("{segment_id}.json")))
    }

    pub fn put_finals(&self, set: &FinalSet) -> Result<(), StoreError> {
        write_atomic(&self.finals_path(&set.segment_id)?, &serde_json::to_vec_pretty(set)?)
    }

    pub fn finals(&self, segment_id: &str) -> Result<Option<FinalSet>, StoreError> {
        match fs::read(self.finals_path(segment_id)?) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn all_finals(&self) -> Result<Vec<FinalSet>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("finals"))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                out.push(serde_json::from_slice(&fs::read(&path)?)?);
            }
        }
        out.sort_by(|a: &FinalSet, b: &FinalSet| a.segment_id.cmp(&b.segment_id));
        Ok(out)
    }
}

/// Hash verified against when the username is unknown so both failure
/// paths cost the same.
fn dummy_hash() -> &'static str {
    static HASH: OnceLock<String> = OnceLock::new();
    HASH.get_or_init(|| hash_password("not-a-password").unwrap_or_default())
}
