use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{VideoSegment, WorkflowError};
use crate::geometry::AccountId;

pub const ASSIGNMENT_CSV_HEADER: &str = "assignment_id,account,video_segment,role,week,status";

/// How final labels for a segment are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Framework {
    /// Several independent labelers, quorum vote per object.
    MajVote,
    /// One labeler, then one reviewer who edits the result.
    LabelReview,
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Framework::MajVote => "MajVote",
            Framework::LabelReview => "LabelReview",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssignmentRole {
    Label,
    Review,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssignmentStatus {
    Open,
    Done,
    Reassigned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub assignment_id: String,
    pub account_id: AccountId,
    pub video_segment_id: String,
    pub role: AssignmentRole,
    /// ISO week, e.g. `2026-W42`.
    pub week: String,
    pub status: AssignmentStatus,
}

#[derive(Default, Clone, Copy)]
struct Load {
    total: usize,
    label: usize,
    review: usize,
}

impl Load {
    fn key(&self, role: AssignmentRole) -> (usize, usize) {
        let per_role = match role {
            AssignmentRole::Label => self.label,
            AssignmentRole::Review => self.review,
        };
        (self.total, per_role)
    }

    fn bump(&mut self, role: AssignmentRole) {
        self.total += 1;
        match role {
            AssignmentRole::Label => self.label += 1,
            AssignmentRole::Review => self.review += 1,
        }
    }
}

/// Distributes work for `segments` across `labelers`.
///
/// Each pick goes to the least-loaded eligible labeler, comparing open
/// assignments overall, then open assignments in the same role, then
/// account id. `existing` open assignments count towards the load.
pub fn create_assignments(
    segments: &[VideoSegment],
    labelers: &[AccountId],
    framework: Framework,
    panel_size: usize,
    week: &str,
    existing: &[Assignment],
) -> Result<Vec<Assignment>, WorkflowError> {
    let mut pool: Vec<AccountId> = labelers.to_vec();
    pool.sort();
    pool.dedup();
    let needed = match framework {
        Framework::MajVote => panel_size,
        Framework::LabelReview => 2,
    };
    if pool.len() < needed {
        return Err(WorkflowError::Config(format!(
            "{framework} needs at least {needed} distinct labelers, got {}",
            pool.len()
        )));
    }

    let mut load: HashMap<AccountId, Load> = pool.iter().map(|a| (a.clone(), Load::default())).collect();
    for a in existing.iter().filter(|a| a.status == AssignmentStatus::Open) {
        if let Some(l) = load.get_mut(&a.account_id) {
            l.bump(a.role);
        }
    }

    let mut out = Vec::new();
    let mut next_id = existing.len();
    let pick = |role: AssignmentRole,
                    exclude: &[AccountId],
                    load: &mut HashMap<AccountId, Load>|
     -> AccountId {
        let chosen = pool
            .iter()
            .filter(|a| !exclude.contains(a))
            .min_by_key(|a| (load[*a].key(role), (*a).clone()))
            .expect("pool size checked above")
            .clone();
        load.get_mut(&chosen).unwrap().bump(role);
        chosen
    };

    for seg in segments {
        let mut taken: Vec<AccountId> = Vec::new();
        let roles: Vec<AssignmentRole> = match framework {
            Framework::MajVote => vec![AssignmentRole::Label; panel_size],
            Framework::LabelReview => vec![AssignmentRole::Label, AssignmentRole::Review],
        };
        for role in roles {
            let account = pick(role, &taken, &mut load);
            taken.push(account.clone());
            out.push(Assignment {
                assignment_id: format!("asg-{next_id:05}"),
                account_id: account,
                video_segment_id: seg.segment_id.clone(),
                role,
                week: week.to_string(),
                status: AssignmentStatus::Open,
            });
            next_id += 1;
        }
    }
    Ok(out)
}

/// The shareable spreadsheet view of assignments.
pub fn assignments_to_csv(assignments: &[Assignment]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ASSIGNMENT_CSV_HEADER.split(','))?;
    for a in assignments {
        w.write_record([
            a.assignment_id.as_str(),
            a.account_id.as_str(),
            a.video_segment_id.as_str(),
            match a.role {
                AssignmentRole::Label => "Label",
                AssignmentRole::Review => "Review",
            },
            a.week.as_str(),
            match a.status {
                AssignmentStatus::Open => "Open",
                AssignmentStatus::Done => "Done",
                AssignmentStatus::Reassigned => "Reassigned",
            },
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
