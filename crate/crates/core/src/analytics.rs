//! Labeling-efficiency and label-density metrics.
//!
//! Overall efficiency charges every participant's time on a video to its
//! final labels; individual efficiency divides one person's time by the
//! labels they produced or checked. Videos are grouped by final labels per
//! frame into `(0,1)`, `[1,2)`, `[2,3)` and `[3,inf)`, and per-label time
//! entries lose their top and bottom 5% before averaging.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::AccountId;
use crate::workflow::Framework;

/// Fraction trimmed from each end of the sorted time-per-label entries.
pub const TRIM_FRACTION: f64 = 0.05;

/// Histograms always span at least `[0, MIN_HISTOGRAM_BINS)`.
pub const MIN_HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("{0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParticipantRole {
    Labeler,
    Reviewer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePerLabelEntry {
    pub video_id: String,
    pub account_id: AccountId,
    pub role: ParticipantRole,
    pub person_seconds: f64,
    pub label_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDensity {
    pub avg_per_frame: f64,
    /// Absent when no frame carries a label.
    pub avg_per_labeled_frame: Option<f64>,
}

/// Average labels per frame and per labeled frame. `label_frames` holds the
/// frame index of every label.
pub fn label_density(label_frames: &[u32], frame_count: u32) -> Result<LabelDensity, AnalyticsError> {
    if frame_count == 0 {
        return Err(AnalyticsError::Domain("frame count must be at least 1".into()));
    }
    let mut labeled = label_frames.to_vec();
    labeled.sort_unstable();
    labeled.dedup();
    let total = label_frames.len() as f64;
    Ok(LabelDensity {
        avg_per_frame: total / frame_count as f64,
        avg_per_labeled_frame: (!labeled.is_empty()).then(|| total / labeled.len() as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DensityGroup {
    /// No labels at all; left out of per-label efficiency.
    Empty,
    /// `(0, 1)`
    G1,
    /// `[1, 2)`
    G2,
    /// `[2, 3)`
    G3,
    /// `[3, inf)`
    G4,
}

pub fn density_group(avg_per_frame: f64) -> Result<DensityGroup, AnalyticsError> {
    if avg_per_frame.is_nan() || avg_per_frame < 0.0 {
        return Err(AnalyticsError::Domain(format!(
            "density must be non-negative, got {avg_per_frame}"
        )));
    }
    Ok(match avg_per_frame {
        0.0 => DensityGroup::Empty,
        d if d < 1.0 => DensityGroup::G1,
        d if d < 2.0 => DensityGroup::G2,
        d if d < 3.0 => DensityGroup::G3,
        _ => DensityGroup::G4,
    })
}

/// Seconds per label for one participant, whether or not the labels ended
/// up final. `None` when they produced no labels.
pub fn individual_efficiency(entry: &TimePerLabelEntry) -> Option<f64> {
    (entry.label_count > 0).then(|| entry.person_seconds / entry.label_count as f64)
}

/// Drops `floor(0.05 n)` entries from each end after a stable sort on
/// seconds per label.
pub fn trim_outliers(entries: &[TimePerLabelEntry]) -> Result<Vec<TimePerLabelEntry>, AnalyticsError> {
    let mut rated = Vec::with_capacity(entries.len());
    for e in entries {
        let rate = individual_efficiency(e).ok_or_else(|| {
            AnalyticsError::Domain(format!(
                "entry for {} on {} has no labels",
                e.account_id, e.video_id
            ))
        })?;
        rated.push((rate, e));
    }
    rated.sort_by(|a, b| a.0.total_cmp(&b.0));
    let cut = trim_count(rated.len());
    Ok(rated[cut..rated.len() - cut]
        .iter()
        .map(|(_, e)| (*e).clone())
        .collect())
}

pub fn trim_count(n: usize) -> usize {
    (TRIM_FRACTION * n as f64).floor() as usize
}

/// Everyone's time on one video under one framework.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkRun {
    pub video_id: String,
    pub framework: Framework,
    pub participants: Vec<TimePerLabelEntry>,
    pub final_label_count: u64,
}

/// Total person-seconds divided by final labels. `None` when the run
/// produced no final label, in which case the video is left out.
pub fn overall_efficiency(run: &FrameworkRun, panel_size: usize) -> Result<Option<f64>, AnalyticsError> {
    let expected = match run.framework {
        Framework::MajVote => panel_size,
        Framework::LabelReview => 2,
    };
    if run.participants.len() != expected {
        return Err(AnalyticsError::Config(format!(
            "{} run on {} has {} participants, expected {expected}",
            run.framework,
            run.video_id,
            run.participants.len()
        )));
    }
    if run.final_label_count == 0 {
        return Ok(None);
    }
    let total: f64 = run.participants.iter().map(|p| p.person_seconds).sum();
    Ok(Some(total / run.final_label_count as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityHistograms {
    pub per_frame: Vec<HistogramBin>,
    pub per_labeled_frame: Vec<HistogramBin>,
}

fn unit_bins(values: &[f64]) -> Vec<HistogramBin> {
    let top = values.iter().fold(0.0f64, |m, &v| m.max(v));
    let n = MIN_HISTOGRAM_BINS.max(top.floor() as usize + 1);
    let mut bins: Vec<HistogramBin> = (0..n)
        .map(|k| HistogramBin {
            bin_low: k as f64,
            bin_high: (k + 1) as f64,
            count: 0,
        })
        .collect();
    for &v in values {
        bins[v.floor() as usize].count += 1;
    }
    bins
}

/// Number of videos per unit-width density bin, for both density measures.
/// Videos without labeled frames are absent from the second histogram.
pub fn density_histogram(videos: &[LabelDensity]) -> DensityHistograms {
    let per_frame: Vec<f64> = videos.iter().map(|d| d.avg_per_frame).collect();
    let per_labeled: Vec<f64> = videos.iter().filter_map(|d| d.avg_per_labeled_frame).collect();
    DensityHistograms {
        per_frame: unit_bins(&per_frame),
        per_labeled_frame: unit_bins(&per_labeled),
    }
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_low,bin_high,count\n");
    for b in bins {
        s.push_str(&format!("{},{},{}\n", b.bin_low, b.bin_high, b.count));
    }
    s
}

/// Inputs for one video: its framework run and where its final labels sit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub run: FrameworkRun,
    pub frame_count: u32,
    pub final_label_frames: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrimScope {
    /// Trim inside each density group.
    PerGroup,
    /// Trim all entries together.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub trim: bool,
    pub scope: TrimScope,
    pub group_by_density: bool,
    pub panel_size: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            trim: true,
            scope: TrimScope::PerGroup,
            group_by_density: true,
            panel_size: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub video_id: String,
    pub framework: Framework,
    pub frame_count: u32,
    pub final_label_count: u64,
    pub density: LabelDensity,
    pub group: DensityGroup,
    pub total_person_seconds: f64,
    /// `None` when the video has no final labels.
    pub overall_seconds_per_label: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    #[serde(flatten)]
    pub entry: TimePerLabelEntry,
    pub group: DensityGroup,
    pub seconds_per_label: Option<f64>,
    pub trimmed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: Option<f64>,
    pub std_error: Option<f64>,
}

impl Stat {
    fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat {
                n,
                mean: None,
                std_error: None,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = (n > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Stat {
            n,
            mean: Some(mean),
            std_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    /// `None` when density grouping is off.
    pub group: Option<DensityGroup>,
    pub framework: Framework,
    pub overall: Stat,
    pub individual: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub options: ReportOptions,
    pub videos: Vec<VideoSummary>,
    pub entries: Vec<EntrySummary>,
    pub trimmed_count: usize,
    /// Videos left out of overall efficiency for lack of final labels.
    pub excluded_videos: Vec<String>,
    pub groups: Vec<GroupSummary>,
    pub histograms: DensityHistograms,
}

pub fn build_report(
    records: &[VideoRecord],
    options: ReportOptions,
) -> Result<EfficiencyReport, AnalyticsError> {
    let mut videos = Vec::new();
    let mut entries: Vec<EntrySummary> = Vec::new();
    for r in records {
        let density = label_density(&r.final_label_frames, r.frame_count)?;
        let group = density_group(density.avg_per_frame)?;
        videos.push(VideoSummary {
            video_id: r.run.video_id.clone(),
            framework: r.run.framework,
            frame_count: r.frame_count,
            final_label_count: r.run.final_label_count,
            density,
            group,
            total_person_seconds: r.run.participants.iter().map(|p| p.person_seconds).sum(),
            overall_seconds_per_label: overall_efficiency(&r.run, options.panel_size)?,
        });
        for p in &r.run.participants {
            entries.push(EntrySummary {
                entry: p.clone(),
                group,
                seconds_per_label: individual_efficiency(p),
                trimmed: false,
            });
        }
    }
    videos.sort_by(|a, b| (&a.video_id, a.framework as u8).cmp(&(&b.video_id, b.framework as u8)));

    if options.trim {
        // pools of entry indices that are trimmed together
        let mut pools: BTreeMap<Option<DensityGroup>, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.seconds_per_label.is_none() || e.group == DensityGroup::Empty {
                continue;
            }
            let key = match options.scope {
                TrimScope::PerGroup => Some(e.group),
                TrimScope::Global => None,
            };
            pools.entry(key).or_default().push(i);
        }
        for idx in pools.values() {
            let mut sorted = idx.clone();
            sorted.sort_by(|&a, &b| {
                entries[a]
                    .seconds_per_label
                    .unwrap()
                    .total_cmp(&entries[b].seconds_per_label.unwrap())
            });
            let cut = trim_count(sorted.len());
            for &i in sorted[..cut].iter().chain(&sorted[sorted.len() - cut..]) {
                entries[i].trimmed = true;
            }
        }
    }
    let trimmed_count = entries.iter().filter(|e| e.trimmed).count();

    let excluded_videos = videos
        .iter()
        .filter(|v| v.overall_seconds_per_label.is_none())
        .map(|v| v.video_id.clone())
        .collect();

    let mut groups = Vec::new();
    let group_keys: Vec<Option<DensityGroup>> = if options.group_by_density {
        [DensityGroup::G1, DensityGroup::G2, DensityGroup::G3, DensityGroup::G4]
            .into_iter()
            .map(Some)
            .collect()
    } else {
        vec![None]
    };
    for key in group_keys {
        for fw in [Framework::MajVote, Framework::LabelReview] {
            let in_group = |g: DensityGroup| g != DensityGroup::Empty && key.is_none_or(|k| k == g);
            let overall: Vec<f64> = videos
                .iter()
                .filter(|v| v.framework == fw && in_group(v.group))
                .filter_map(|v| v.overall_seconds_per_label)
                .collect();
            let framework_of = |video: &str| {
                records
                    .iter()
                    .find(|r| r.run.video_id == video && r.run.framework == fw)
                    .is_some()
            };
            let individual: Vec<f64> = entries
                .iter()
                .filter(|e| !e.trimmed && in_group(e.group) && framework_of(&e.entry.video_id))
                .filter_map(|e| e.seconds_per_label)
                .collect();
            if overall.is_empty() && individual.is_empty() {
                continue;
            }
            groups.push(GroupSummary {
                group: key,
                framework: fw,
                overall: Stat::of(&overall),
                individual: Stat::of(&individual),
            });
        }
    }

    let densities: Vec<LabelDensity> = videos.iter().map(|v| v.density).collect();
    Ok(EfficiencyReport {
        options,
        videos,
        entries,
        trimmed_count,
        excluded_videos,
        groups,
        histograms: density_histogram(&densities),
    })
}
