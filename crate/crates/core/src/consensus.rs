//! Final labels from several submissions: quorum voting over a panel of
//! labelers, or the reviewer's edited result in label-then-review.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{greedy_match, AccountId, BoundingBox, Category, GeometryError};
use crate::workflow::{Framework, Mode, Submission, SubmissionStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusConfig {
    pub iou_threshold: f64,
    pub quorum: usize,
    pub panel_size: usize,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            iou_threshold: 0.5,
            quorum: 3,
            panel_size: 5,
        }
    }
}

impl ConsensusConfig {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        if self.quorum < 1 || self.quorum > self.panel_size {
            return Err(ConsensusError::Config(format!(
                "quorum {} must lie in 1..={}",
                self.quorum, self.panel_size
            )));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(ConsensusError::Config(format!(
                "IoU threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalLabel {
    #[serde(flatten)]
    pub bbox: BoundingBox,
    pub supporting_labelers: BTreeSet<AccountId>,
    pub framework: Framework,
    pub reviewer_id: Option<AccountId>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One panel member's boxes on a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelerSet {
    pub labeler_id: AccountId,
    pub boxes: Vec<BoundingBox>,
}

/// Quorum vote over one frame.
///
/// Labelers are visited in panel order and each of their unconsumed boxes
/// becomes an anchor in turn (box id order). Every other labeler
/// contributes at most its best-overlapping unconsumed box at or above the
/// IoU threshold. An anchor with at least `quorum` supporters (itself
/// included) yields a final label at the anchor's coordinates, and all
/// boxes of the cluster are consumed.
pub fn majority_vote_frame(
    sets: &[LabelerSet],
    cfg: &ConsensusConfig,
) -> Result<Vec<FinalLabel>, ConsensusError> {
    cfg.validate()?;
    if sets.len() != cfg.panel_size {
        return Err(ConsensusError::Config(format!(
            "panel has {} label sets, expected {}",
            sets.len(),
            cfg.panel_size
        )));
    }
    let frame = sets.iter().flat_map(|s| &s.boxes).map(|b| b.frame_index).next();
    if let Some(f) = frame {
        if let Some(b) = sets.iter().flat_map(|s| &s.boxes).find(|b| b.frame_index != f) {
            return Err(ConsensusError::Domain(format!(
                "label sets mix frames {f} and {}",
                b.frame_index
            )));
        }
    }

    let sorted: Vec<Vec<BoundingBox>> = sets
        .iter()
        .map(|s| {
            let mut v = s.boxes.clone();
            v.sort_by_key(|b| b.box_id);
            v
        })
        .collect();
    let mut consumed: Vec<Vec<bool>> = sorted.iter().map(|v| vec![false; v.len()]).collect();
    let mut out = Vec::new();

    for (i, anchors) in sorted.iter().enumerate() {
        for (a, anchor) in anchors.iter().enumerate() {
            if consumed[i][a] {
                continue;
            }
            let mut cluster = vec![(i, a)];
            for (j, others) in sorted.iter().enumerate() {
                if j == i {
                    continue;
                }
                let free: Vec<usize> = (0..others.len()).filter(|&k| !consumed[j][k]).collect();
                let candidates: Vec<BoundingBox> = free.iter().map(|&k| others[k].clone()).collect();
                let pairs = greedy_match(std::slice::from_ref(anchor), &candidates, cfg.iou_threshold)?;
                if let Some(p) = pairs.first() {
                    let k = free
                        .iter()
                        .copied()
                        .find(|&k| others[k].box_id == p.other_box_id)
                        .expect("matched box comes from the candidate list");
                    cluster.push((j, k));
                }
            }
            if cluster.len() < cfg.quorum {
                continue;
            }
            for &(j, k) in &cluster {
                consumed[j][k] = true;
            }
            let members: Vec<&BoundingBox> = cluster.iter().map(|&(j, k)| &sorted[j][k]).collect();
            let mut bbox = anchor.clone();
            bbox.category = cluster_category(anchor.category, &members);
            out.push(FinalLabel {
                bbox,
                supporting_labelers: cluster
                    .iter()
                    .map(|&(j, _)| sets[j].labeler_id.clone())
                    .collect(),
                framework: Framework::MajVote,
                reviewer_id: None,
            });
        }
    }
    Ok(out)
}

fn cluster_category(anchor: Category, members: &[&BoundingBox]) -> Category {
    let animals = members.iter().filter(|b| b.category == Category::Animal).count();
    let humans = members.len() - animals;
    match animals.cmp(&humans) {
        std::cmp::Ordering::Greater => Category::Animal,
        std::cmp::Ordering::Less => Category::Human,
        std::cmp::Ordering::Equal => anchor,
    }
}

/// Quorum vote frame by frame over a complete panel of submissions, given
/// in panel order.
pub fn majority_vote_video(
    submissions: &[&Submission],
    cfg: &ConsensusConfig,
) -> Result<Vec<FinalLabel>, ConsensusError> {
    cfg.validate()?;
    if submissions.len() != cfg.panel_size {
        return Err(ConsensusError::Config(format!(
            "{} submissions for a panel of {}",
            submissions.len(),
            cfg.panel_size
        )));
    }
    let Some(first) = submissions.first() else {
        return Ok(Vec::new());
    };
    for s in submissions {
        if s.video_segment_id != first.video_segment_id {
            return Err(ConsensusError::Domain(format!(
                "submission {} covers {}, not {}",
                s.submission_id, s.video_segment_id, first.video_segment_id
            )));
        }
        if s.status != SubmissionStatus::Submitted || s.mode != Mode::Label {
            return Err(ConsensusError::Domain(format!(
                "submission {} is not a submitted label pass",
                s.submission_id
            )));
        }
    }

    let frames: BTreeSet<u32> = submissions
        .iter()
        .flat_map(|s| s.frames.iter())
        .filter(|(_, v)| !v.is_empty())
        .map(|(f, _)| *f)
        .collect();
    let mut out = Vec::new();
    for f in frames {
        let sets: Vec<LabelerSet> = submissions
            .iter()
            .map(|s| LabelerSet {
                labeler_id: s.labeler_id.clone(),
                boxes: s.frame_boxes(f).to_vec(),
            })
            .collect();
        out.extend(majority_vote_frame(&sets, cfg)?);
    }
    out.sort_by(|a, b| {
        (a.bbox.frame_index, a.bbox.box_id, &a.bbox.author_id)
            .cmp(&(b.bbox.frame_index, b.bbox.box_id, &b.bbox.author_id))
    });
    Ok(out)
}

/// The reviewer's resulting box set, attributed to each box's creator and
/// to the reviewer.
pub fn review_merge(
    original: &Submission,
    review: &Submission,
) -> Result<Vec<FinalLabel>, ConsensusError> {
    if review.mode != Mode::Review {
        return Err(ConsensusError::Integrity(format!(
            "{} is not a review",
            review.submission_id
        )));
    }
    if review.reviewed_submission_id.as_ref() != Some(&original.submission_id) {
        return Err(ConsensusError::Integrity(format!(
            "{} does not review {}",
            review.submission_id, original.submission_id
        )));
    }
    if review.status != SubmissionStatus::Submitted {
        return Err(ConsensusError::Domain(format!(
            "review {} has not been submitted",
            review.submission_id
        )));
    }
    let reviewer = review.labeler_id.clone();
    Ok(review
        .all_boxes()
        .map(|b| FinalLabel {
            bbox: b.clone(),
            supporting_labelers: [b.author_id.clone(), reviewer.clone()].into_iter().collect(),
            framework: Framework::LabelReview,
            reviewer_id: Some(reviewer.clone()),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::testing::bx;
    use crate::geometry::{BoxId, Origin};
    use crate::workflow::{EventKind, SubmissionId, VideoSegment};
    use chrono::Utc;

    fn set(name: &str, boxes: Vec<BoundingBox>) -> LabelerSet {
        LabelerSet {
            labeler_id: AccountId::new(name),
            boxes: boxes
                .into_iter()
                .map(|mut b| {
                    b.author_id = AccountId::new(name);
                    b
                })
                .collect(),
        }
    }

    const NAMES: [&str; 5] = ["l1", "l2", "l3", "l4", "l5"];

    #[test]
    fn identical_panel_gives_one_label() {
        let sets: Vec<_> = NAMES.iter().map(|n| set(n, vec![bx(1, 10, 10, 20, 20)])).collect();
        let out = majority_vote_frame(&sets, &ConsensusConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].supporting_labelers.len(), 5);
        assert_eq!(out[0].bbox.author_id.as_str(), "l1");
    }

    #[test]
    fn disjoint_panel_gives_nothing() {
        let sets: Vec<_> = NAMES
            .iter()
            .enumerate()
            .map(|(i, n)| set(n, vec![bx(1, i as i64 * 40, 0, 20, 20)]))
            .collect();
        assert!(majority_vote_frame(&sets, &ConsensusConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn three_of_five_uses_first_labeler_coordinates() {
        let sets = vec![
            set("l1", vec![bx(1, 10, 10, 20, 20)]),
            set("l2", vec![bx(1, 12, 11, 20, 20)]),
            set("l3", vec![bx(1, 9, 12, 20, 20)]),
            set("l4", vec![bx(1, 100, 100, 20, 20)]),
            set("l5", vec![bx(1, 150, 10, 20, 20)]),
        ];
        let out = majority_vote_frame(&sets, &ConsensusConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].bbox.same_geometry(&sets[0].boxes[0]));
        let who: Vec<&str> = out[0].supporting_labelers.iter().map(|a| a.as_str()).collect();
        assert_eq!(who, vec!["l1", "l2", "l3"]);
    }

    #[test]
    fn later_labeler_can_anchor() {
        // l1 missed the object that l2, l3, l4 all marked
        let sets = vec![
            set("l1", vec![]),
            set("l2", vec![bx(5, 10, 10, 20, 20)]),
            set("l3", vec![bx(1, 11, 10, 20, 20)]),
            set("l4", vec![bx(1, 10, 11, 20, 20)]),
            set("l5", vec![]),
        ];
        let out = majority_vote_frame(&sets, &ConsensusConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox.author_id.as_str(), "l2");
    }

    #[test]
    fn category_majority_with_anchor_tiebreak() {
        let mut boxes: Vec<_> = NAMES.iter().map(|n| set(n, vec![bx(1, 10, 10, 20, 20)])).collect();
        for s in &mut boxes[1..4] {
            s.boxes[0].category = Category::Human;
        }
        let out = majority_vote_frame(&boxes, &ConsensusConfig::default()).unwrap();
        assert_eq!(out[0].bbox.category, Category::Human);

        let mut four: Vec<_> = NAMES.iter().map(|n| set(n, vec![bx(1, 10, 10, 20, 20)])).collect();
        four[4].boxes.clear();
        four[1].boxes[0].category = Category::Human;
        four[2].boxes[0].category = Category::Human;
        let out = majority_vote_frame(&four, &ConsensusConfig::default()).unwrap();
        assert_eq!(out[0].bbox.category, Category::Animal);
    }

    #[test]
    fn wrong_panel_size_is_config_error() {
        let sets: Vec<_> = NAMES[..4].iter().map(|n| set(n, vec![])).collect();
        assert!(matches!(
            majority_vote_frame(&sets, &ConsensusConfig::default()),
            Err(ConsensusError::Config(_))
        ));
        let bad = ConsensusConfig { quorum: 6, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn box_order_within_a_set_does_not_matter() {
        let a = vec![bx(1, 0, 0, 20, 20), bx(2, 50, 50, 20, 20), bx(3, 5, 0, 20, 20)];
        let mut sets: Vec<_> = NAMES.iter().map(|n| set(n, a.clone())).collect();
        let out1 = majority_vote_frame(&sets, &ConsensusConfig::default()).unwrap();
        for s in &mut sets {
            s.boxes.reverse();
        }
        let out2 = majority_vote_frame(&sets, &ConsensusConfig::default()).unwrap();
        assert_eq!(out1, out2);
    }

    fn segment() -> VideoSegment {
        VideoSegment {
            segment_id: "v-s000".into(),
            video_id: "v".into(),
            first_frame: 0,
            last_frame: 9,
            predecessor_note: String::new(),
        }
    }

    fn labeled(name: &str, per_frame: &[(u32, i64)]) -> Submission {
        let mut s = Submission::new_label(
            SubmissionId::new(format!("sub-{name}")),
            &segment(),
            AccountId::new(name),
            200,
            200,
            4,
        );
        for f in 0..9 {
            s.advance_frame(f, f + 1, false, &Default::default(), None).unwrap();
        }
        for &(f, x) in per_frame {
            s.apply_kind(&EventKind::BoxDrawn {
                frame_index: f,
                x,
                y: 10,
                width: 20,
                height: 20,
                category: Category::Animal,
            })
            .unwrap();
        }
        s.submit(Utc::now()).unwrap();
        s
    }

    #[test]
    fn video_vote_empty_and_single_frame() {
        let subs: Vec<_> = NAMES.iter().map(|n| labeled(n, &[])).collect();
        let refs: Vec<&Submission> = subs.iter().collect();
        assert!(majority_vote_video(&refs, &ConsensusConfig::default()).unwrap().is_empty());

        let subs: Vec<_> = NAMES
            .iter()
            .enumerate()
            .map(|(i, n)| labeled(n, &[(6, 30), (2, 40 * i as i64)]))
            .collect();
        let refs: Vec<&Submission> = subs.iter().collect();
        let out = majority_vote_video(&refs, &ConsensusConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox.frame_index, 6);
    }

    #[test]
    fn video_vote_rejects_mixed_segments() {
        let mut subs: Vec<_> = NAMES.iter().map(|n| labeled(n, &[])).collect();
        subs[3].video_segment_id = "v-s001".into();
        let refs: Vec<&Submission> = subs.iter().collect();
        assert!(matches!(
            majority_vote_video(&refs, &ConsensusConfig::default()),
            Err(ConsensusError::Domain(_))
        ));
    }

    fn reviewed(orig: &Submission, edits: &[EventKind]) -> Submission {
        let mut r = Submission::new_review(SubmissionId::new("rev"), AccountId::new("rita"), orig).unwrap();
        for e in edits {
            r.apply_kind(e).unwrap();
        }
        r.submit(Utc::now()).unwrap();
        r
    }

    #[test]
    fn review_merge_identity_delete_and_edit() {
        let orig = labeled("l1", &[(0, 10), (0, 60)]);
        let same = reviewed(&orig, &[]);
        let out = review_merge(&orig, &same).unwrap();
        let orig_boxes: Vec<_> = orig.all_boxes().cloned().collect();
        assert_eq!(out.iter().map(|f| f.bbox.clone()).collect::<Vec<_>>(), orig_boxes);
        assert!(out.iter().all(|f| f.reviewer_id.as_ref().unwrap().as_str() == "rita"));
        assert!(out.iter().all(|f| f.bbox.author_id.as_str() == "l1"));

        let ids: Vec<BoxId> = orig_boxes.iter().map(|b| b.box_id).collect();
        let wiped = reviewed(
            &orig,
            &ids
                .iter()
                .map(|&id| EventKind::BoxDeleted { frame_index: 0, box_id: id })
                .collect::<Vec<_>>(),
        );
        assert!(review_merge(&orig, &wiped).unwrap().is_empty());

        let edited = reviewed(
            &orig,
            &[
                EventKind::BoxMoved {
                    frame_index: 0,
                    box_id: ids[0],
                    x: 15,
                    y: 15,
                    width: None,
                    height: None,
                },
                EventKind::BoxDrawn {
                    frame_index: 0,
                    x: 120,
                    y: 120,
                    width: 10,
                    height: 10,
                    category: Category::Human,
                },
            ],
        );
        let out = review_merge(&orig, &edited).unwrap();
        assert_eq!(out.len(), 3);
        let moved = out.iter().find(|f| f.bbox.box_id == ids[0]).unwrap();
        assert_eq!((moved.bbox.x, moved.bbox.y, moved.bbox.origin), (15, 15, Origin::ReviewEdited));
        assert_eq!(moved.bbox.author_id.as_str(), "l1");
        let added = out.iter().find(|f| f.bbox.x == 120).unwrap();
        assert_eq!(added.bbox.author_id.as_str(), "rita");
        let kept = out.iter().find(|f| f.bbox.box_id == ids[1]).unwrap();
        assert_eq!(kept.bbox, orig_boxes[1]);
    }

    #[test]
    fn review_merge_checks_reference() {
        let orig = labeled("l1", &[(0, 10)]);
        let other = labeled("l2", &[(0, 10)]);
        let r = reviewed(&orig, &[]);
        assert!(matches!(review_merge(&other, &r), Err(ConsensusError::Integrity(_))));
        assert!(matches!(review_merge(&orig, &other), Err(ConsensusError::Integrity(_))));
    }
}
