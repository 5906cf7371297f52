mod common;

use axum::http::StatusCode;
use serde_json::json;

use common::*;
use thermlabel::pipeline::{self, AssignRequest};
use thermlabel::workflow::Framework;

const W: u32 = 64;
const H: u32 = 48;
const FRAMES: u32 = 6;

/// One video, a blob moving 2 px/frame, a LabelReview assignment for ann+bob.
fn setup() -> (tempfile::TempDir, axum::Router, Vec<u8>) {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("raw");
    write_frames(&frames, FRAMES, W, H, |k| vec![(10 + 2 * k as i64, 20)]);
    let store = open_store(&tmp.path().join("data"));
    add_users(&store, &["ann", "bob", "cat"]);
    pipeline::ingest(&store, &frames, "v1", 30.0, false).unwrap();
    pipeline::assign(
        &store,
        &AssignRequest {
            videos: vec!["v1".into()],
            labelers: vec![],
            framework: Framework::LabelReview,
            max_frames: 100,
            week: "w1".into(),
            panel_size: 5,
        },
    )
    .unwrap();
    let first = std::fs::read(frames.join("frame_000000.png")).unwrap();
    (tmp, app(store), first)
}

fn drawn(seq: u64, frame: u32, x: i64, y: i64) -> serde_json::Value {
    json!({"sequence_no": seq, "kind": "BoxDrawn", "frame_index": frame, "x": x, "y": y, "width": 6, "height": 6})
}

async fn new_label(app: &axum::Router, token: &str) -> String {
    let r = call(app, "POST", "/api/submissions", Some(token), Some(json!({"mode": "Label", "segment": "v1-s000"}))).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.bytes));
    r.json()["submission_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn login_and_list_videos() {
    let (_t, app, _) = setup();
    assert_eq!(call(&app, "GET", "/api/videos", None, None).await.status, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&app, "GET", "/api/videos", Some("deadbeef"), None).await.status, StatusCode::UNAUTHORIZED);

    let bad = call(&app, "POST", "/api/login", None, Some(json!({"username": "ann", "password": "nope"}))).await;
    let unknown = call(&app, "POST", "/api/login", None, Some(json!({"username": "zed", "password": "nope"}))).await;
    assert_eq!(bad.status, StatusCode::UNAUTHORIZED);
    assert_eq!(bad.bytes, unknown.bytes);
    assert_eq!(bad.json()["code"], "unauthorized");

    let r = call(&app, "POST", "/api/login", None, Some(json!({"username": "ann", "password": PASSWORD}))).await;
    assert_eq!(r.status, StatusCode::OK);
    let body = String::from_utf8(r.bytes.clone()).unwrap();
    assert!(!body.contains("argon2") && !body.contains("password"));
    let token = r.json()["token"].as_str().unwrap().to_string();

    let videos = call(&app, "GET", "/api/videos", Some(&token), None).await;
    assert_eq!(videos.status, StatusCode::OK);
    assert_eq!(videos.json()[0]["video_id"], "v1");
    assert_eq!(videos.json()[0]["frame_count"], FRAMES);
}

#[tokio::test]
async fn malformed_body_is_400_json() {
    let (_t, app, _) = setup();
    let r = call(&app, "POST", "/api/login", None, Some(json!({"user": "ann"}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.json()["code"], "invalid");
}

#[tokio::test]
async fn frames_are_served_verbatim() {
    let (_t, app, first) = setup();
    assert_eq!(call(&app, "GET", "/api/videos/v1/frames/0", None, None).await.status, StatusCode::UNAUTHORIZED);
    let token = login(&app, "ann").await;
    let a = call(&app, "GET", "/api/videos/v1/frames/0", Some(&token), None).await;
    assert_eq!(a.status, StatusCode::OK);
    assert_eq!(a.headers["cache-control"], "no-store");
    assert_eq!(a.headers["content-type"], "image/png");
    assert_eq!(a.bytes, first);
    let b = call(&app, "GET", "/api/videos/v1/frames/0", Some(&token), None).await;
    assert_eq!(a.bytes, b.bytes);
    let past = call(&app, "GET", &format!("/api/videos/v1/frames/{FRAMES}"), Some(&token), None).await;
    assert_eq!(past.status, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/videos/nope/frames/0", Some(&token), None).await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn events_are_idempotent_and_owned() {
    let (_t, app, _) = setup();
    let ann = login(&app, "ann").await;
    let bob = login(&app, "bob").await;
    let id = new_label(&app, &ann).await;
    let uri = format!("/api/submissions/{id}/events");

    let batch = json!({"events": [drawn(0, 0, 5, 5), drawn(1, 0, 30, 30)]});
    let r = call(&app, "POST", &uri, Some(&ann), Some(batch.clone())).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["last_sequence_no"], 1);

    let replay = call(&app, "POST", &uri, Some(&ann), Some(batch)).await;
    assert_eq!(replay.status, StatusCode::CONFLICT);
    assert_eq!(replay.json()["code"], "sequence_conflict");
    let s = call(&app, "GET", &format!("/api/submissions/{id}"), Some(&ann), None).await.json();
    assert_eq!(s["frames"]["0"].as_array().unwrap().len(), 2);

    let foreign = call(&app, "POST", &uri, Some(&bob), Some(json!({"events": [drawn(2, 0, 9, 9)]}))).await;
    assert_eq!(foreign.status, StatusCode::FORBIDDEN);

    let forged = call(&app, "POST", &uri, Some(&ann), Some(json!({"events": [{"sequence_no": 2, "kind": "Submit"}]}))).await;
    assert_eq!(forged.status, StatusCode::BAD_REQUEST);

    let tiny = json!({"events": [{"sequence_no": 2, "kind": "BoxDrawn", "frame_index": 0, "x": 1, "y": 1, "width": 2, "height": 2}]});
    assert_eq!(call(&app, "POST", &uri, Some(&ann), Some(tiny)).await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn advance_tracks_once() {
    let (_t, app, _) = setup();
    let ann = login(&app, "ann").await;
    let id = new_label(&app, &ann).await;
    // box around the blob at (10,20): pixels 9..=11
    call(&app, "POST", &format!("/api/submissions/{id}/events"), Some(&ann), Some(json!({"events": [drawn(0, 0, 8, 18)]}))).await;

    let adv = format!("/api/submissions/{id}/advance");
    let r = call(&app, "POST", &adv, Some(&ann), Some(json!({"from": 0, "to": 1, "tracker_enabled": true, "buffer": 10}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
    let out = r.json();
    assert_eq!(out["created"], 1);
    // blob centre moved to x=12.5 (pixels 11..=13); a 6 px box is re-centred to x=10
    assert_eq!(out["boxes"][0]["x"], 10);
    assert_eq!(out["boxes"][0]["y"], 18);
    assert_eq!(out["boxes"][0]["origin"], "Tracked");

    call(&app, "POST", &adv, Some(&ann), Some(json!({"from": 1, "to": 0}))).await;
    let again = call(&app, "POST", &adv, Some(&ann), Some(json!({"from": 0, "to": 1}))).await;
    assert_eq!(again.status, StatusCode::OK);
    assert_eq!(again.json()["created"], 0);

    let bad = call(&app, "POST", &adv, Some(&ann), Some(json!({"from": 1, "to": 2, "buffer": 500}))).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn submit_delete_need_confirmation() {
    let (_t, app, _) = setup();
    let ann = login(&app, "ann").await;
    let bob = login(&app, "bob").await;
    let id = new_label(&app, &ann).await;
    call(&app, "POST", &format!("/api/submissions/{id}/events"), Some(&ann), Some(json!({"events": [drawn(0, 0, 5, 5)]}))).await;

    let submit = format!("/api/submissions/{id}/submit");
    assert_eq!(call(&app, "POST", &submit, Some(&ann), None).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "DELETE", &format!("/api/submissions/{id}"), Some(&ann), None).await.status, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", &format!("{submit}?confirm=true"), Some(&bob), None).await.status, StatusCode::FORBIDDEN);
    let ok = call(&app, "POST", &format!("{submit}?confirm=true"), Some(&ann), None).await;
    assert_eq!(ok.status, StatusCode::OK);
    assert_eq!(ok.json()["status"], "Submitted");

    let late = call(&app, "DELETE", &format!("/api/submissions/{id}?confirm=true"), Some(&ann), None).await;
    assert_eq!(late.status, StatusCode::CONFLICT);
    let edit = call(&app, "POST", &format!("/api/submissions/{id}/events"), Some(&ann), Some(json!({"events": [drawn(2, 0, 20, 5)]}))).await;
    assert_eq!(edit.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn review_flow_and_admin_routes() {
    let (_t, app, _) = setup();
    let ann = login(&app, "ann").await;
    let bob = login(&app, "bob").await;
    let admin = login(&app, "admin").await;

    let mine = call(&app, "GET", "/api/assignments", Some(&ann), None).await.json();
    assert!(mine.as_array().unwrap().iter().all(|a| a["account_id"] == "ann"));
    assert_eq!(call(&app, "GET", "/api/assignments", Some(&admin), None).await.json().as_array().unwrap().len(), 2);

    let id = new_label(&app, &ann).await;
    call(&app, "POST", &format!("/api/submissions/{id}/events"), Some(&ann), Some(json!({"events": [drawn(0, 0, 5, 5)]}))).await;

    // reviewing an unsubmitted label pass is a state error
    let early = call(&app, "POST", "/api/submissions", Some(&bob), Some(json!({"mode": "Review", "segment": "v1-s000", "reviewed_submission_id": id}))).await;
    assert_eq!(early.status, StatusCode::CONFLICT);
    call(&app, "POST", &format!("/api/submissions/{id}/submit?confirm=true"), Some(&ann), None).await;

    let picker = call(&app, "GET", "/api/videos/v1/submissions", Some(&bob), None).await.json();
    assert_eq!(picker[0]["submission_id"], id.as_str());
    assert_eq!(picker[0]["status"], "Submitted");

    let own = call(&app, "POST", "/api/submissions", Some(&ann), Some(json!({"mode": "Review", "segment": "v1-s000", "reviewed_submission_id": id}))).await;
    assert!(own.status.is_client_error());

    assert_eq!(call(&app, "POST", "/api/consensus/v1-s000", Some(&ann), None).await.status, StatusCode::FORBIDDEN);
    let pending = call(&app, "POST", "/api/consensus/v1-s000", Some(&admin), None).await;
    assert_eq!(pending.status, StatusCode::CONFLICT);
    assert_eq!(pending.json()["code"], "missing_prerequisite");
    assert!(pending.json()["message"].as_str().unwrap().contains("bob"));

    let r = call(&app, "POST", "/api/submissions", Some(&bob), Some(json!({"mode": "Review", "segment": "v1-s000", "reviewed_submission_id": id}))).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let rid = r.json()["submission_id"].as_str().unwrap().to_string();
    assert_eq!(r.json()["frames"]["0"].as_array().unwrap().len(), 1);
    call(&app, "POST", &format!("/api/submissions/{rid}/submit?confirm=true"), Some(&bob), None).await;

    let finals = call(&app, "POST", "/api/consensus/v1-s000", Some(&admin), None).await;
    assert_eq!(finals.status, StatusCode::OK);
    assert_eq!(finals.json()["labels"].as_array().unwrap().len(), 1);
    assert_eq!(finals.json()["labels"][0]["reviewer_id"], "bob");

    assert_eq!(call(&app, "GET", "/api/reports/efficiency", Some(&bob), None).await.status, StatusCode::FORBIDDEN);
    let report = call(&app, "GET", "/api/reports/efficiency?trim=false", Some(&admin), None).await;
    assert_eq!(report.status, StatusCode::OK);
    assert_eq!(report.json()["videos"][0]["final_label_count"], 1);
}

#[tokio::test]
async fn unknown_submission_is_404() {
    let (_t, app, _) = setup();
    let ann = login(&app, "ann").await;
    assert_eq!(call(&app, "GET", "/api/submissions/sub-424242", Some(&ann), None).await.status, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/api/submissions", Some(&ann), Some(json!({"mode": "Label", "segment": "nope"}))).await.status, StatusCode::NOT_FOUND);
}
