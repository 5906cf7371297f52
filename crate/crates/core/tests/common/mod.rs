#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use chrono::Utc;
use thermlabel::api::{router, ApiConfig, AppState};
use thermlabel::geometry::{AccountId, Category};
use thermlabel::store::{AccountRole, Actor, NewSubmission, Store, StoreConfig};
use thermlabel::workflow::{EventKind, Mode, SubmissionEvent, SubmissionId};

pub const PASSWORD: &str = "correct horse";

pub fn write_png(path: &Path, width: u32, height: u32, pixels: Vec<u8>) {
    image::GrayImage::from_raw(width, height, pixels)
        .expect("pixel count")
        .save(path)
        .unwrap();
}

/// Dark frames with 3x3 bright blobs centred at the given pixels.
pub fn blob_frame(width: u32, height: u32, centres: &[(i64, i64)]) -> Vec<u8> {
    let mut px = vec![30u8; (width * height) as usize];
    for &(cx, cy) in centres {
        for y in cy - 1..=cy + 1 {
            for x in cx - 1..=cx + 1 {
                if (0..width as i64).contains(&x) && (0..height as i64).contains(&y) {
                    px[(y as u32 * width + x as u32) as usize] = 255;
                }
            }
        }
    }
    px
}

/// Writes `n` frames; `centres(k)` gives the blob positions in frame `k`.
pub fn write_frames(dir: &Path, n: u32, width: u32, height: u32, centres: impl Fn(u32) -> Vec<(i64, i64)>) {
    std::fs::create_dir_all(dir).unwrap();
    for k in 0..n {
        write_png(
            &dir.join(format!("frame_{k:06}.png")),
            width,
            height,
            blob_frame(width, height, &centres(k)),
        );
    }
}

pub fn open_store(root: &Path) -> Store {
    Store::open(root, StoreConfig::default()).unwrap()
}

pub fn add_users(store: &Store, labelers: &[&str]) {
    store.add_user("admin", PASSWORD, AccountRole::Admin).unwrap();
    for l in labelers {
        store.add_user(l, PASSWORD, AccountRole::Labeler).unwrap();
    }
}

pub fn app(store: Store) -> Router {
    router(AppState::new(store, ApiConfig::default()))
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or(Value::Null)
    }
}

pub async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, bytes }
}

pub async fn login(app: &Router, user: &str) -> String {
    let r = call(app, "POST", "/api/login", None, Some(serde_json::json!({"username": user, "password": PASSWORD}))).await;
    assert_eq!(r.status, StatusCode::OK, "login {user}: {}", String::from_utf8_lossy(&r.bytes));
    r.json()["token"].as_str().unwrap().to_string()
}

pub fn labeler(name: &str) -> Actor {
    Actor { account_id: AccountId::new(name), role: AccountRole::Labeler }
}

pub fn ev(seq: u64, kind: EventKind) -> SubmissionEvent {
    SubmissionEvent { sequence_no: seq, timestamp: Utc::now(), kind }
}

pub fn draw(frame: u32, x: i64, y: i64) -> EventKind {
    EventKind::BoxDrawn { frame_index: frame, x, y, width: 8, height: 8, category: Category::Animal }
}

/// Labels `boxes` (frame, x, y) with `seconds` of active time and submits.
pub fn label(store: &Store, who: &str, segment: &str, boxes: &[(u32, i64, i64)], seconds: f64) -> SubmissionId {
    let actor = labeler(who);
    let s = store
        .create_submission(&actor, &NewSubmission { mode: Mode::Label, segment: segment.into(), reviewed_submission_id: None })
        .unwrap();
    // visit every frame while still empty so nothing propagates
    for f in s.first_frame..s.last_frame {
        store.advance(&actor, &s.submission_id, f, f + 1, false, &Default::default()).unwrap();
    }
    let base = s.last_frame - s.first_frame;
    let mut events: Vec<SubmissionEvent> = boxes.iter().enumerate().map(|(i, &(f, x, y))| ev(base as u64 + i as u64, draw(f, x, y))).collect();
    events.push(ev(base as u64 + events.len() as u64, EventKind::TimeTick { frame_index: s.first_frame, active_seconds: seconds }));
    store.append_events(&actor, &s.submission_id, &events).unwrap();
    store.submit(&actor, &s.submission_id, true).unwrap();
    s.submission_id
}

pub mod persistence {
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    use thermlabel::geometry::{AccountId, Category};
    use thermlabel::pipeline::{self, AssignRequest};
    use thermlabel::store::{AccountRole, Actor, NewSubmission, Store, StoreError};
    use thermlabel::tracker::TrackerConfig;
    use thermlabel::workflow::{EventKind, Framework, Mode, SubmissionEvent, WorkflowError};

    pub const FRAMES: u32 = 8;

    #[derive(Debug, Clone)]
    pub enum Op {
        Draw { x: i64, y: i64, w: i64, h: i64, human: bool },
        Move { pick: usize, dx: i64, dy: i64 },
        Delete { pick: usize },
        Reclassify { pick: usize },
        Undo,
        Tick { millis: u32 },
        Go { to: u32, track: bool },
        /// Resend the last accepted client event.
        Duplicate,
    }

    pub fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            4 => (-5i64..45, -5i64..35, 1i64..15, 1i64..15, any::<bool>())
                .prop_map(|(x, y, w, h, human)| Op::Draw { x, y, w, h, human }),
            2 => (any::<usize>(), -6i64..7, -6i64..7).prop_map(|(pick, dx, dy)| Op::Move { pick, dx, dy }),
            1 => any::<usize>().prop_map(|pick| Op::Delete { pick }),
            1 => any::<usize>().prop_map(|pick| Op::Reclassify { pick }),
            1 => Just(Op::Undo),
            1 => (0u32..5000).prop_map(|millis| Op::Tick { millis }),
            2 => (0..FRAMES, any::<bool>()).prop_map(|(to, track)| Op::Go { to, track }),
            1 => Just(Op::Duplicate),
        ]
    }

    pub fn store_with_video(root: &std::path::Path) -> Store {
        let raw = root.join("raw");
        super::write_frames(&raw, FRAMES, 40, 30, |k| vec![(5 + 3 * k as i64, 12)]);
        let store = super::open_store(&root.join("data"));
        store.add_user("p1", super::PASSWORD, AccountRole::Labeler).unwrap();
        store.add_user("p2", super::PASSWORD, AccountRole::Labeler).unwrap();
        pipeline::ingest(&store, &raw, "pv", 10.0, false).unwrap();
        pipeline::assign(
            &store,
            &AssignRequest {
                videos: vec!["pv".into()],
                labelers: vec![],
                framework: Framework::LabelReview,
                max_frames: FRAMES,
                week: String::new(),
                panel_size: 5,
            },
        )
        .unwrap();
        store
    }

    /// Drives one submission through `ops`, restarts the store and checks
    /// the refolded state. Returns the number of stored events.
    pub fn roundtrip(root: &std::path::Path, ops: &[Op]) -> Result<u64, String> {
        let store = store_with_video(root);
        let actor = Actor { account_id: AccountId::new("p1"), role: AccountRole::Labeler };
        let id = store
            .create_submission(&actor, &NewSubmission { mode: Mode::Label, segment: "pv-s000".into(), reviewed_submission_id: None })
            .map_err(|e| e.to_string())?
            .submission_id;
        let t0 = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap();
        let mut cur = 0u32;
        let mut last_accepted: Option<SubmissionEvent> = None;
        for (i, o) in ops.iter().enumerate() {
            let state = store.submission(&id).map_err(|e| e.to_string())?;
            let boxes = state.frame_boxes(cur).to_vec();
            let pick = |k: usize| boxes.get(k % boxes.len().max(1)).cloned();
            let kind = match o {
                Op::Go { to, track } => {
                    if store.advance(&actor, &id, cur, *to, *track, &TrackerConfig::default()).is_ok() {
                        cur = *to;
                    }
                    continue;
                }
                Op::Duplicate => {
                    let Some(ev) = last_accepted.clone() else { continue };
                    let before = store.submission(&id).map_err(|e| e.to_string())?;
                    match store.append_events(&actor, &id, &[ev]) {
                        Err(StoreError::Workflow(WorkflowError::Conflict { .. })) => {}
                        other => return Err(format!("duplicate accepted: {other:?}")),
                    }
                    if store.submission(&id).map_err(|e| e.to_string())? != before {
                        return Err("duplicate changed state".into());
                    }
                    continue;
                }
                Op::Draw { x, y, w, h, human } => EventKind::BoxDrawn {
                    frame_index: cur,
                    x: *x,
                    y: *y,
                    width: *w,
                    height: *h,
                    category: if *human { Category::Human } else { Category::Animal },
                },
                Op::Move { pick: k, dx, dy } => match pick(*k) {
                    Some(b) => EventKind::BoxMoved { frame_index: cur, box_id: b.box_id, x: b.x + dx, y: b.y + dy, width: None, height: None },
                    None => continue,
                },
                Op::Delete { pick: k } => match pick(*k) {
                    Some(b) => EventKind::BoxDeleted { frame_index: cur, box_id: b.box_id },
                    None => continue,
                },
                Op::Reclassify { pick: k } => match pick(*k) {
                    Some(b) => EventKind::BoxReclassified { frame_index: cur, box_id: b.box_id, category: b.category.cycled() },
                    None => continue,
                },
                Op::Undo => EventKind::Undo { frame_index: cur },
                Op::Tick { millis } => EventKind::TimeTick { frame_index: cur, active_seconds: *millis as f64 / 1000.0 },
            };
            let ev = SubmissionEvent {
                sequence_no: state.next_sequence_no(),
                timestamp: t0 + chrono::Duration::milliseconds(i as i64),
                kind,
            };
            if store.append_events(&actor, &id, std::slice::from_ref(&ev)).is_ok() {
                last_accepted = Some(ev);
            }
        }

        let live = store.submission(&id).map_err(|e| e.to_string())?;
        drop(store);
        let restarted = super::open_store(&root.join("data"));
        let folded = restarted.load_submission(&id).map_err(|e| e.to_string())?;
        if folded != live {
            return Err("refolded state differs".into());
        }
        let a = serde_json::to_vec(&live).unwrap();
        let b = serde_json::to_vec(&folded).unwrap();
        if a != b {
            return Err("refolded bytes differ".into());
        }
        Ok(live.last_sequence_no.map_or(0, |n| n + 1))
    }
}
