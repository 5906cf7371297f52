//! HTTP facade over the store. Handlers only translate; every rule lives in
//! the store and workflow layers.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::analytics::{EfficiencyReport, ReportOptions, TrimScope};
use crate::consensus::{ConsensusConfig, ConsensusError};
use crate::pipeline::{self, PipelineError};
use crate::store::{
    AccountInfo, Actor, AdvanceOutcome, FinalSet, NewSubmission, Store, StoreError, SubmissionSummary,
    VideoMeta,
};
use crate::tracker::TrackerConfig;
use crate::workflow::{Assignment, EventKind, Submission, SubmissionEvent, SubmissionId, WorkflowError};

/// Error body: `{"code": "...", "message": "..."}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}: {}", self.code, self.message);
        }
        let body = ErrorBody { code: self.code.to_string(), message: self.message };
        (self.status, Json(body)).into_response()
    }
}

fn workflow_status(e: &WorkflowError) -> (StatusCode, &'static str) {
    match e {
        WorkflowError::Conflict { .. } => (StatusCode::CONFLICT, "sequence_conflict"),
        WorkflowError::State(_) => (StatusCode::CONFLICT, "invalid_state"),
        WorkflowError::Integrity(_) => (StatusCode::CONFLICT, "integrity"),
        WorkflowError::Domain(_)
        | WorkflowError::Rejected(_)
        | WorkflowError::Config(_)
        | WorkflowError::Tracker(_) => (StatusCode::BAD_REQUEST, "invalid"),
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, code) = match &e {
            StoreError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            StoreError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            StoreError::Unauthorized(_) => (StatusCode::UNAUTHORIZED, "unauthorized"),
            StoreError::Forbidden(_) => (StatusCode::FORBIDDEN, "forbidden"),
            StoreError::Validation(_) => (StatusCode::BAD_REQUEST, "invalid"),
            StoreError::MissingPrerequisite(_) => (StatusCode::CONFLICT, "missing_prerequisite"),
            StoreError::Workflow(w) => workflow_status(w),
            StoreError::Io(_) | StoreError::Json(_) | StoreError::Internal(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Store(s) => s.into(),
            PipelineError::Workflow(w) => {
                let (status, code) = workflow_status(&w);
                ApiError::new(status, code, w.to_string())
            }
            PipelineError::Validation(m) => ApiError::new(StatusCode::BAD_REQUEST, "invalid", m),
            PipelineError::MissingPrerequisite(m) => {
                ApiError::new(StatusCode::CONFLICT, "missing_prerequisite", m)
            }
            PipelineError::Consensus(c @ (ConsensusError::Domain(_) | ConsensusError::Integrity(_))) => {
                ApiError::new(StatusCode::CONFLICT, "invalid_state", c.to_string())
            }
            PipelineError::Consensus(c) => ApiError::new(StatusCode::BAD_REQUEST, "invalid", c.to_string()),
            PipelineError::Analytics(a) => ApiError::new(StatusCode::BAD_REQUEST, "invalid", a.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid", e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Service-wide defaults.
#[derive(Debug, Clone, Default)]
pub struct ApiConfig {
    pub tracker: TrackerConfig,
    pub consensus: ConsensusConfig,
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub config: Arc<ApiConfig>,
}

impl AppState {
    pub fn new(store: Store, config: ApiConfig) -> Self {
        AppState { store: Arc::new(store), config: Arc::new(config) }
    }

    /// Runs blocking store work off the async workers.
    async fn run<T, E>(&self, f: impl FnOnce(&Store) -> Result<T, E> + Send + 'static) -> ApiResult<T>
    where
        T: Send + 'static,
        E: Into<ApiError> + Send + 'static,
    {
        let store = self.store.clone();
        tokio::task::spawn_blocking(move || f(&store).map_err(Into::into))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
    }
}

impl FromRequestParts<AppState> for Actor {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing bearer token"))?;
        Ok(state.store.session(token)?)
    }
}

fn require_admin(actor: &Actor) -> ApiResult<()> {
    if actor.is_admin() {
        Ok(())
    } else {
        Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "administrator role required"))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/login", post(login))
        .route("/api/videos", get(list_videos))
        .route("/api/videos/{video}/frames/{n}", get(frame))
        .route("/api/videos/{video}/submissions", get(video_submissions))
        .route("/api/assignments", get(assignments))
        .route("/api/submissions", post(create_submission))
        .route("/api/submissions/{id}", get(get_submission).delete(delete_submission))
        .route("/api/submissions/{id}/events", post(append_events))
        .route("/api/submissions/{id}/advance", post(advance))
        .route("/api/submissions/{id}/submit", post(submit))
        .route("/api/consensus/{segment}", post(consensus))
        .route("/api/reports/efficiency", get(efficiency_report))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug, Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub account: AccountInfo,
}

async fn login(
    State(state): State<AppState>,
    body: Result<Json<LoginRequest>, JsonRejection>,
) -> ApiResult<Json<LoginResponse>> {
    let Json(req) = body?;
    let (token, account) = state.run(move |s| s.login(&req.username, &req.password)).await?;
    Ok(Json(LoginResponse { token, account }))
}

async fn list_videos(State(state): State<AppState>, _actor: Actor) -> ApiResult<Json<Vec<VideoMeta>>> {
    Ok(Json(state.run(|s| s.list_videos()).await?))
}

async fn frame(
    State(state): State<AppState>,
    _actor: Actor,
    Path((video, n)): Path<(String, u32)>,
) -> ApiResult<Response> {
    let bytes = state.run(move |s| s.frame_bytes(&video, n)).await?;
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (header::CACHE_CONTROL, HeaderValue::from_static("no-store")),
        ],
        bytes,
    )
        .into_response())
}

async fn video_submissions(
    State(state): State<AppState>,
    _actor: Actor,
    Path(video): Path<String>,
) -> ApiResult<Json<Vec<SubmissionSummary>>> {
    Ok(Json(state.run(move |s| s.list_submissions(&video)).await?))
}

/// The caller's own assignments; administrators see all.
async fn assignments(State(state): State<AppState>, actor: Actor) -> ApiResult<Json<Vec<Assignment>>> {
    let all = state.run(|s| s.assignments()).await?;
    Ok(Json(
        all.into_iter()
            .filter(|a| actor.is_admin() || a.account_id == actor.account_id)
            .collect(),
    ))
}

async fn create_submission(
    State(state): State<AppState>,
    actor: Actor,
    body: Result<Json<NewSubmission>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Submission>)> {
    let Json(req) = body?;
    let sub = state.run(move |s| s.create_submission(&actor, &req)).await?;
    Ok((StatusCode::CREATED, Json(sub)))
}

async fn get_submission(
    State(state): State<AppState>,
    _actor: Actor,
    Path(id): Path<String>,
) -> ApiResult<Json<Submission>> {
    Ok(Json(state.run(move |s| s.submission(&SubmissionId::new(id))).await?))
}

/// An autosaved edit; the server stamps it when the client does not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientEvent {
    pub sequence_no: u64,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventBatch {
    pub events: Vec<ClientEvent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventAck {
    pub last_sequence_no: u64,
}

async fn append_events(
    State(state): State<AppState>,
    actor: Actor,
    Path(id): Path<String>,
    body: Result<Json<EventBatch>, JsonRejection>,
) -> ApiResult<Json<EventAck>> {
    let Json(batch) = body?;
    let now = Utc::now();
    let events: Vec<SubmissionEvent> = batch
        .events
        .into_iter()
        .map(|e| SubmissionEvent {
            sequence_no: e.sequence_no,
            timestamp: e.timestamp.unwrap_or(now),
            kind: e.kind,
        })
        .collect();
    let last = state
        .run(move |s| s.append_events(&actor, &SubmissionId::new(id), &events))
        .await?;
    Ok(Json(EventAck { last_sequence_no: last }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvanceRequest {
    pub from: u32,
    pub to: u32,
    #[serde(default = "default_true")]
    pub tracker_enabled: bool,
    /// Overrides the configured search buffer.
    #[serde(default)]
    pub buffer: Option<u32>,
}

fn default_true() -> bool {
    true
}

async fn advance(
    State(state): State<AppState>,
    actor: Actor,
    Path(id): Path<String>,
    body: Result<Json<AdvanceRequest>, JsonRejection>,
) -> ApiResult<Json<AdvanceOutcome>> {
    let Json(req) = body?;
    let mut cfg = state.config.tracker.clone();
    if let Some(b) = req.buffer {
        cfg.buffer = b;
    }
    cfg.validate()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid", e.to_string()))?;
    let out = state
        .run(move |s| s.advance(&actor, &SubmissionId::new(id), req.from, req.to, req.tracker_enabled, &cfg))
        .await?;
    Ok(Json(out))
}

#[derive(Debug, Default, Deserialize)]
pub struct Confirm {
    #[serde(default)]
    pub confirm: bool,
}

async fn submit(
    State(state): State<AppState>,
    actor: Actor,
    Path(id): Path<String>,
    Query(q): Query<Confirm>,
) -> ApiResult<Json<Submission>> {
    Ok(Json(state.run(move |s| s.submit(&actor, &SubmissionId::new(id), q.confirm)).await?))
}

async fn delete_submission(
    State(state): State<AppState>,
    actor: Actor,
    Path(id): Path<String>,
    Query(q): Query<Confirm>,
) -> ApiResult<Json<Submission>> {
    Ok(Json(state.run(move |s| s.delete(&actor, &SubmissionId::new(id), q.confirm)).await?))
}

async fn consensus(
    State(state): State<AppState>,
    actor: Actor,
    Path(segment): Path<String>,
) -> ApiResult<Json<FinalSet>> {
    require_admin(&actor)?;
    let cfg = state.config.consensus.clone();
    Ok(Json(state.run(move |s| pipeline::run_consensus(s, &segment, &cfg)).await?))
}

#[derive(Debug, Default, Deserialize)]
pub struct ReportQuery {
    #[serde(default)]
    pub trim: Option<bool>,
    #[serde(default)]
    pub global_trim: Option<bool>,
    #[serde(default)]
    pub group_by_density: Option<bool>,
}

async fn efficiency_report(
    State(state): State<AppState>,
    actor: Actor,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Json<EfficiencyReport>> {
    require_admin(&actor)?;
    let defaults = ReportOptions::default();
    let options = ReportOptions {
        trim: q.trim.unwrap_or(defaults.trim),
        scope: if q.global_trim.unwrap_or(false) { TrimScope::Global } else { defaults.scope },
        group_by_density: q.group_by_density.unwrap_or(defaults.group_by_density),
        panel_size: state.config.consensus.panel_size,
    };
    Ok(Json(state.run(move |s| pipeline::report(s, options)).await?))
}
