//! Operator workflows shared by the CLI and the service: ingest, assignment,
//! consensus, export and reporting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    self, AnalyticsError, EfficiencyReport, FrameworkRun, ParticipantRole, ReportOptions,
    TimePerLabelEntry, VideoRecord,
};
use crate::consensus::{self, ConsensusConfig, ConsensusError};
use crate::geometry::AccountId;
use crate::store::{valid_video_id, write_atomic, AccountRole, FinalSet, Store, StoreError, VideoMeta};
use crate::workflow::{
    assignments_to_csv, create_assignments, split_video, Assignment, AssignmentRole,
    AssignmentStatus, Framework, Mode, Submission, SubmissionStatus, WorkflowError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    MissingPrerequisite(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// Process exit status: 2 for bad input, 3 for an unmet prerequisite.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_)
            | PipelineError::Workflow(_)
            | PipelineError::Store(
                StoreError::Validation(_) | StoreError::Conflict(_) | StoreError::NotFound(_) | StoreError::Workflow(_),
            ) => 2,
            PipelineError::MissingPrerequisite(_) | PipelineError::Store(StoreError::MissingPrerequisite(_)) => 3,
            _ => 1,
        }
    }
}

// ---- ingest ----

struct DirLock<'a>(&'a Path);

impl Drop for DirLock<'_> {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.0);
    }
}

/// Validates a directory of `frame_NNNNNN.png` grayscale images and
/// registers it as a video.
pub fn ingest(
    store: &Store,
    dir: &Path,
    video_id: &str,
    fps: f64,
    polarity_inverted: bool,
) -> Result<VideoMeta, PipelineError> {
    if !valid_video_id(video_id) {
        return Err(PipelineError::Validation(format!(
            "video id {video_id:?} must be 1-64 letters, digits, '-' or '_'"
        )));
    }
    if !(fps.is_finite() && fps > 0.0) {
        return Err(PipelineError::Validation(format!("fps must be positive, got {fps}")));
    }

    let videos = store.corpus().video_dir(video_id);
    let videos = videos.parent().expect("video dir has a parent");
    fs::create_dir_all(videos)?;
    let lock_path = videos.join(format!(".{video_id}.lock"));
    match fs::OpenOptions::new().write(true).create_new(true).open(&lock_path) {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
            return Err(StoreError::Conflict(format!("video {video_id} is being ingested")).into())
        }
        Err(e) => return Err(e.into()),
    }
    let _lock = DirLock(&lock_path);

    let target = store.corpus().video_dir(video_id);
    if target.exists() {
        return Err(StoreError::Conflict(format!("video {video_id} already exists")).into());
    }

    let mut frames: BTreeMap<u32, std::path::PathBuf> = BTreeMap::new();
    let mut misnamed = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        if !name.to_ascii_lowercase().ends_with(".png") {
            continue;
        }
        match crate::store::parse_frame_file_name(&name) {
            Some(n) => {
                frames.insert(n, path);
            }
            None => misnamed.push(name),
        }
    }
    misnamed.sort();
    if !misnamed.is_empty() {
        return Err(PipelineError::Validation(format!(
            "frame files must be named frame_NNNNNN.png: {}",
            misnamed.join(", ")
        )));
    }
    let Some((&last, _)) = frames.last_key_value() else {
        return Err(PipelineError::Validation(format!("no frames found in {}", dir.display())));
    };
    let missing: Vec<String> = (0..=last)
        .filter(|n| !frames.contains_key(n))
        .map(crate::store::frame_file_name)
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::Validation(format!(
            "gap in frame numbering, missing {}",
            missing.join(", ")
        )));
    }

    let mut dims: Option<(u32, u32)> = None;
    let mut bad_format = Vec::new();
    let mut bad_size = Vec::new();
    for (n, path) in &frames {
        let name = crate::store::frame_file_name(*n);
        let img = match image::open(path) {
            Ok(img) => img,
            Err(e) => {
                bad_format.push(format!("{name} ({e})"));
                continue;
            }
        };
        if img.color() != image::ColorType::L8 {
            bad_format.push(format!("{name} ({:?}, expected 8-bit grayscale)", img.color()));
            continue;
        }
        let d = (img.width(), img.height());
        match dims {
            None => dims = Some(d),
            Some(first) if first != d => bad_size.push(format!("{name} ({}x{})", d.0, d.1)),
            _ => {}
        }
    }
    if !bad_format.is_empty() {
        return Err(PipelineError::Validation(format!("unsupported frames: {}", bad_format.join(", "))));
    }
    let (width, height) = dims.expect("at least one frame decoded");
    if !bad_size.is_empty() {
        return Err(PipelineError::Validation(format!(
            "mixed frame dimensions, expected {width}x{height}: {}",
            bad_size.join(", ")
        )));
    }

    // stage next to the target and publish with a rename
    let staging = videos.join(format!(".{video_id}.staging"));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(staging.join("frames"))?;
    for (n, path) in &frames {
        fs::copy(path, staging.join("frames").join(crate::store::frame_file_name(*n)))?;
    }
    let meta = VideoMeta {
        video_id: video_id.to_string(),
        frame_count: last + 1,
        fps,
        polarity_inverted,
        width,
        height,
    };
    write_atomic(&staging.join("meta.json"), &serde_json::to_vec_pretty(&meta)?)?;
    fs::rename(&staging, &target)?;
    log::info!("ingested {video_id}: {} frames of {width}x{height}", meta.frame_count);
    Ok(meta)
}

// ---- assignment ----

#[derive(Debug, Clone)]
pub struct AssignRequest {
    pub videos: Vec<String>,
    /// Defaults to every labeler account.
    pub labelers: Vec<AccountId>,
    pub framework: Framework,
    pub max_frames: u32,
    pub week: String,
    pub panel_size: usize,
}

/// Splits videos into segments and hands each segment to a fresh panel.
pub fn assign(store: &Store, req: &AssignRequest) -> Result<Vec<Assignment>, PipelineError> {
    let labelers = if req.labelers.is_empty() {
        store
            .list_accounts()?
            .into_iter()
            .filter(|a| a.role == AccountRole::Labeler)
            .map(|a| a.account_id)
            .collect()
    } else {
        let known = store.list_accounts()?;
        for l in &req.labelers {
            if !known.iter().any(|a| &a.account_id == l) {
                return Err(StoreError::NotFound(format!("user {l}")).into());
            }
        }
        req.labelers.clone()
    };
    let existing_segments = store.segments()?;
    let mut segments = Vec::new();
    for v in &req.videos {
        let meta = store.video_meta(v)?;
        if existing_segments.iter().any(|s| &s.video_id == v) {
            return Err(StoreError::Conflict(format!("video {v} is already assigned")).into());
        }
        segments.extend(split_video(v, meta.frame_count, req.max_frames)?);
    }
    let existing = store.assignments()?;
    let created = create_assignments(&segments, &labelers, req.framework, req.panel_size, &req.week, &existing)?;
    store.put_segments(&segments)?;
    store.put_assignments(&created)?;
    Ok(created)
}

pub fn assignments_csv(store: &Store) -> Result<String, PipelineError> {
    Ok(assignments_to_csv(&store.assignments()?)?)
}

// ---- consensus ----

fn latest_submitted<'a>(
    subs: &'a [Submission],
    segment: &str,
    who: &AccountId,
    mode: Mode,
) -> Option<&'a Submission> {
    subs.iter()
        .filter(|s| {
            s.video_segment_id == segment
                && &s.labeler_id == who
                && s.mode == mode
                && s.status == SubmissionStatus::Submitted
        })
        .max_by(|a, b| (a.submitted_at, &a.submission_id).cmp(&(b.submitted_at, &b.submission_id)))
}

/// Computes and persists the final labels of a segment from its assigned
/// submissions. The framework follows from the segment's assignments.
pub fn run_consensus(store: &Store, segment_id: &str, cfg: &ConsensusConfig) -> Result<FinalSet, PipelineError> {
    let segment = store.segment(segment_id)?;
    let mut assigned: Vec<Assignment> = store
        .assignments()?
        .into_iter()
        .filter(|a| a.video_segment_id == segment_id && a.status != AssignmentStatus::Reassigned)
        .collect();
    assigned.sort_by(|a, b| a.assignment_id.cmp(&b.assignment_id));
    if assigned.is_empty() {
        return Err(PipelineError::MissingPrerequisite(format!("segment {segment_id} has no assignments")));
    }
    let framework = if assigned.iter().any(|a| a.role == AssignmentRole::Review) {
        Framework::LabelReview
    } else {
        Framework::MajVote
    };
    let subs = store.submissions()?;

    let (labels, sources) = match framework {
        Framework::MajVote => {
            let mut panel = Vec::new();
            let mut missing = Vec::new();
            for a in &assigned {
                match latest_submitted(&subs, segment_id, &a.account_id, Mode::Label) {
                    Some(s) => panel.push(s),
                    None => missing.push(format!("{} ({})", a.account_id, a.assignment_id)),
                }
            }
            if !missing.is_empty() {
                return Err(PipelineError::MissingPrerequisite(format!(
                    "segment {segment_id}: waiting on {}",
                    missing.join(", ")
                )));
            }
            let labels = consensus::majority_vote_video(&panel, cfg)?;
            (labels, panel.iter().map(|s| s.submission_id.clone()).collect())
        }
        Framework::LabelReview => {
            let labeler = assigned.iter().find(|a| a.role == AssignmentRole::Label);
            let reviewer = assigned.iter().find(|a| a.role == AssignmentRole::Review);
            let (Some(labeler), Some(reviewer)) = (labeler, reviewer) else {
                return Err(PipelineError::MissingPrerequisite(format!(
                    "segment {segment_id} lacks a label or review assignment"
                )));
            };
            let Some(original) = latest_submitted(&subs, segment_id, &labeler.account_id, Mode::Label) else {
                return Err(PipelineError::MissingPrerequisite(format!(
                    "segment {segment_id}: waiting on {} ({}) and {} ({})",
                    labeler.account_id, labeler.assignment_id, reviewer.account_id, reviewer.assignment_id
                )));
            };
            let review = subs
                .iter()
                .filter(|s| {
                    s.mode == Mode::Review
                        && s.status == SubmissionStatus::Submitted
                        && s.labeler_id == reviewer.account_id
                        && s.reviewed_submission_id.as_ref() == Some(&original.submission_id)
                })
                .max_by(|a, b| (a.submitted_at, &a.submission_id).cmp(&(b.submitted_at, &b.submission_id)));
            let Some(review) = review else {
                return Err(PipelineError::MissingPrerequisite(format!(
                    "segment {segment_id}: waiting on {} ({})",
                    reviewer.account_id, reviewer.assignment_id
                )));
            };
            let labels = consensus::review_merge(original, review)?;
            (labels, vec![original.submission_id.clone(), review.submission_id.clone()])
        }
    };

    let set = FinalSet {
        segment_id: segment_id.to_string(),
        video_id: segment.video_id.clone(),
        framework,
        source_submissions: sources,
        labels,
    };
    store.put_finals(&set)?;
    let done: Vec<Assignment> = assigned
        .into_iter()
        .map(|mut a| {
            a.status = AssignmentStatus::Done;
            a
        })
        .collect();
    store.put_assignments(&done)?;
    Ok(set)
}

// ---- export ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

/// One final label as written by `export`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub video_id: String,
    pub frame_index: u32,
    pub x: i64,
    pub y: i64,
    pub width: i64,
    pub height: i64,
    pub category: String,
    pub framework: String,
    /// Account ids joined with `;`.
    pub supporting_labelers: String,
    pub reviewer_id: Option<String>,
}

pub const EXPORT_CSV_HEADER: &str =
    "video_id,frame_index,x,y,width,height,category,framework,supporting_labelers,reviewer_id";

pub fn export_records(store: &Store, videos: &[String]) -> Result<Vec<ExportRecord>, PipelineError> {
    for v in videos {
        store.video_meta(v)?;
    }
    let mut out: Vec<ExportRecord> = store
        .all_finals()?
        .into_iter()
        .filter(|f| videos.is_empty() || videos.contains(&f.video_id))
        .flat_map(|f| {
            let video = f.video_id;
            f.labels.into_iter().map(move |l| ExportRecord {
                video_id: video.clone(),
                frame_index: l.bbox.frame_index,
                x: l.bbox.x,
                y: l.bbox.y,
                width: l.bbox.width,
                height: l.bbox.height,
                category: l.bbox.category.as_str().to_string(),
                framework: l.framework.to_string(),
                supporting_labelers: l
                    .supporting_labelers
                    .iter()
                    .map(AccountId::as_str)
                    .collect::<Vec<_>>()
                    .join(";"),
                reviewer_id: l.reviewer_id.map(|r| r.as_str().to_string()),
            })
        })
        .collect();
    out.sort_by(|a, b| {
        (&a.video_id, a.frame_index, a.x, a.y, a.width, a.height, &a.category, &a.supporting_labelers)
            .cmp(&(&b.video_id, b.frame_index, b.x, b.y, b.width, b.height, &b.category, &b.supporting_labelers))
    });
    Ok(out)
}

pub fn render_export(records: &[ExportRecord], format: ExportFormat) -> Result<Vec<u8>, PipelineError> {
    match format {
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(EXPORT_CSV_HEADER.split(','))?;
            for r in records {
                w.serialize(r)?;
            }
            Ok(w.into_inner().map_err(|e| e.into_error())?)
        }
        ExportFormat::Jsonl => {
            let mut out = Vec::new();
            for r in records {
                serde_json::to_writer(&mut out, r)?;
                out.push(b'\n');
            }
            Ok(out)
        }
    }
}

// ---- report ----

/// Turns each finalized segment into an analytics record. Time comes from
/// the submissions that produced the final labels.
pub fn video_records(store: &Store) -> Result<Vec<VideoRecord>, PipelineError> {
    let mut out = Vec::new();
    for set in store.all_finals()? {
        let segment = store.segment(&set.segment_id)?;
        let mut participants = Vec::new();
        for id in &set.source_submissions {
            let s = store.submission(id)?;
            participants.push(TimePerLabelEntry {
                video_id: set.segment_id.clone(),
                account_id: s.labeler_id.clone(),
                role: match s.mode {
                    Mode::Label => ParticipantRole::Labeler,
                    Mode::Review => ParticipantRole::Reviewer,
                },
                person_seconds: s.active_seconds(),
                label_count: s.box_count() as u64,
            });
        }
        out.push(VideoRecord {
            run: FrameworkRun {
                video_id: set.segment_id.clone(),
                framework: set.framework,
                participants,
                final_label_count: set.labels.len() as u64,
            },
            frame_count: segment.frame_count(),
            final_label_frames: set.labels.iter().map(|l| l.bbox.frame_index).collect(),
        });
    }
    Ok(out)
}

pub fn report(store: &Store, options: ReportOptions) -> Result<EfficiencyReport, PipelineError> {
    Ok(analytics::build_report(&video_records(store)?, options)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `efficiency.json`, `videos.csv`, `entries.csv`, `groups.csv` and
/// the two histogram tables into `dir`.
pub fn write_report(report: &EfficiencyReport, dir: &Path) -> Result<Vec<std::path::PathBuf>, PipelineError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), PipelineError> {
        let p = dir.join(name);
        write_atomic(&p, &bytes)?;
        written.push(p);
        Ok(())
    };
    put("efficiency.json", serde_json::to_vec_pretty(report)?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "video_id", "framework", "frame_count", "final_label_count", "avg_per_frame",
        "avg_per_labeled_frame", "density_group", "total_person_seconds", "seconds_per_final_label",
    ])?;
    for v in &report.videos {
        w.write_record([
            v.video_id.clone(),
            v.framework.to_string(),
            v.frame_count.to_string(),
            v.final_label_count.to_string(),
            v.density.avg_per_frame.to_string(),
            opt(v.density.avg_per_labeled_frame),
            format!("{:?}", v.group),
            v.total_person_seconds.to_string(),
            opt(v.overall_seconds_per_label),
        ])?;
    }
    put("videos.csv", w.into_inner().map_err(|e| e.into_error())?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["video_id", "account_id", "role", "person_seconds", "label_count", "density_group", "seconds_per_label", "trimmed"])?;
    for e in &report.entries {
        w.write_record([
            e.entry.video_id.clone(),
            e.entry.account_id.to_string(),
            format!("{:?}", e.entry.role),
            e.entry.person_seconds.to_string(),
            e.entry.label_count.to_string(),
            format!("{:?}", e.group),
            opt(e.seconds_per_label),
            e.trimmed.to_string(),
        ])?;
    }
    put("entries.csv", w.into_inner().map_err(|e| e.into_error())?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["density_group", "framework", "overall_n", "overall_mean", "overall_se", "individual_n", "individual_mean", "individual_se"])?;
    for g in &report.groups {
        w.write_record([
            g.group.map(|g| format!("{g:?}")).unwrap_or_else(|| "All".into()),
            g.framework.to_string(),
            g.overall.n.to_string(),
            opt(g.overall.mean),
            opt(g.overall.std_error),
            g.individual.n.to_string(),
            opt(g.individual.mean),
            opt(g.individual.std_error),
        ])?;
    }
    put("groups.csv", w.into_inner().map_err(|e| e.into_error())?)?;

    put("histogram_per_frame.csv", analytics::histogram_csv(&report.histograms.per_frame).into_bytes())?;
    put(
        "histogram_per_labeled_frame.csv",
        analytics::histogram_csv(&report.histograms.per_labeled_frame).into_bytes(),
    )?;
    Ok(written)
}
