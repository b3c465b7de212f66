//! HTTP front end over the run store.
//!
//! Submissions are queued onto a bounded worker pool and answered with 202.
//! Every read endpoint is served from the run store, so any response can be
//! reproduced from disk alone.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use masqrad_core::orchestrator::{Engine, PipelineRun, RunStage, StageTiming, StoreError, Transition};
use masqrad_core::query::UserQuery;
use masqrad_core::sandbox::{digest_bytes, Artifact, ArtifactKind};

/// How often the event stream re-reads the transition log.
pub const EVENT_POLL: Duration = Duration::from_millis(50);

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, workers: usize) -> Self {
        Self {
            engine,
            workers: Arc::new(Semaphore::new(workers.max(1))),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/runs", post(submit))
        .route("/v1/runs/{id}", get(status))
        .route("/v1/runs/{id}/transcript", get(transcript))
        .route("/v1/runs/{id}/artifacts", get(artifacts))
        .route("/v1/runs/{id}/artifacts/{name}", get(artifact))
        .route("/v1/runs/{id}/events", get(events))
        .with_state(state)
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    BadRequest(String),
    Unavailable(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, message) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Unavailable(m) => (StatusCode::SERVICE_UNAVAILABLE, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (code, Json(json!({ "error": message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::RunNotFound(_) | StoreError::InvalidRunId(_) => ApiError::NotFound(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub query: String,
    pub dataset_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub query: UserQuery,
    pub dataset_ref: String,
    pub stage: RunStage,
    pub failed_stage: Option<RunStage>,
    pub failure_reason: Option<String>,
    pub timings: Vec<StageTiming>,
    pub warnings: Vec<String>,
    pub created_at: chrono::DateTime<chrono::Utc>,
}

impl From<PipelineRun> for RunStatus {
    fn from(run: PipelineRun) -> Self {
        Self {
            run_id: run.run_id,
            query: run.query,
            dataset_ref: run.dataset_source,
            stage: run.stage,
            failed_stage: run.failed_stage,
            failure_reason: run.failure_reason,
            timings: run.timings,
            warnings: run.warnings,
            created_at: run.created_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    #[serde(flatten)]
    pub artifact: Artifact,
    pub media_type: String,
    pub url: String,
}

pub fn media_type(file: &str) -> &'static str {
    let ext = file
        .rsplit_once('.')
        .map(|(_, e)| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => "image/png",
        "svg" => "image/svg+xml",
        "csv" => "text/csv",
        "json" => "application/json",
        "html" => "text/html",
        "txt" => "text/plain",
        _ => "application/octet-stream",
    }
}

async fn health(State(state): State<AppState>) -> Result<Json<serde_json::Value>, ApiError> {
    let root = state.engine.store().root();
    if !root.is_dir() {
        return Err(ApiError::Unavailable(format!(
            "run store {} is missing",
            root.display()
        )));
    }
    state
        .engine
        .backend()
        .health()
        .await
        .map_err(|e| ApiError::Unavailable(format!("backend unavailable: {e}")))?;
    Ok(Json(
        json!({ "status": "ok", "backend": state.engine.backend().name() }),
    ))
}

async fn submit(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: SubmitRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))?;
    if req.query.trim().is_empty() || req.dataset_ref.trim().is_empty() {
        return Err(ApiError::BadRequest("query and dataset_ref must be non-empty".into()));
    }
    state
        .engine
        .backend()
        .health()
        .await
        .map_err(|e| ApiError::Unavailable(format!("backend unavailable: {e}")))?;
    let run = state
        .engine
        .create_run(UserQuery::from_text(req.query), &req.dataset_ref)
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let run_id = run.run_id.clone();
    let engine = state.engine.clone();
    let workers = state.workers.clone();
    tokio::spawn(async move {
        let Ok(_permit) = workers.acquire_owned().await else {
            return;
        };
        let id = run.run_id.clone();
        if let Err(e) = engine.drive(run).await {
            tracing::error!(run_id = %id, error = %e, "run aborted");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id }))).into_response())
}

fn load(state: &AppState, id: &str) -> Result<PipelineRun, ApiError> {
    Ok(state.engine.store().load_run(id)?)
}

async fn status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<RunStatus>, ApiError> {
    Ok(Json(load(&state, &id)?.into()))
}

async fn transcript(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let run = load(&state, &id)?;
    match run.transcript {
        Some(t) => Ok(Json(t).into_response()),
        None => Err(ApiError::NotFound(format!("run {id} has no transcript yet"))),
    }
}

async fn artifacts(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Vec<ArtifactEntry>>, ApiError> {
    let run = load(&state, &id)?;
    let listing = run
        .execution
        .map(|e| e.artifacts)
        .unwrap_or_default()
        .into_iter()
        .filter(|a| a.kind != ArtifactKind::Manifest)
        .map(|a| ArtifactEntry {
            media_type: media_type(&a.file).to_string(),
            url: format!("/v1/runs/{id}/artifacts/{}", a.name),
            artifact: a,
        })
        .collect();
    Ok(Json(listing))
}

async fn artifact(
    State(state): State<AppState>,
    Path((id, name)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let run = load(&state, &id)?;
    let found = run
        .execution
        .as_ref()
        .and_then(|e| e.artifact(&name))
        .ok_or_else(|| ApiError::NotFound(format!("run {id} has no artifact {name}")))?;
    let path = state.engine.store().artifacts_dir(&id).join(&found.file);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::Internal(format!("cannot read {}: {e}", path.display())))?;
    if digest_bytes(&bytes) != found.digest {
        return Err(ApiError::Internal(format!(
            "artifact {name} does not match its recorded digest"
        )));
    }
    Ok(([(header::CONTENT_TYPE, media_type(&found.file))], bytes).into_response())
}

fn transition_event(t: &Transition) -> Event {
    Event::default()
        .event("transition")
        .id(t.seq.to_string())
        .data(serde_json::to_string(t).expect("transition serializes"))
}

struct Tail {
    state: AppState,
    id: String,
    sent: usize,
    pending: std::collections::VecDeque<Transition>,
    finished: bool,
}

/// Replays the transition log and follows it until a terminal stage.
async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    state.engine.store().read_transitions(&id)?;
    let tail = Tail {
        state,
        id,
        sent: 0,
        pending: Default::default(),
        finished: false,
    };
    let stream = futures::stream::unfold(tail, |mut tail| async move {
        loop {
            if let Some(t) = tail.pending.pop_front() {
                if t.to.is_terminal() {
                    tail.finished = true;
                    tail.pending.clear();
                }
                return Some((Ok(transition_event(&t)), tail));
            }
            if tail.finished {
                return None;
            }
            match tail.state.engine.store().read_transitions(&tail.id) {
                Ok(log) if log.len() > tail.sent => {
                    tail.pending.extend(log[tail.sent..].iter().cloned());
                    tail.sent = log.len();
                }
                Ok(_) => tokio::time::sleep(EVENT_POLL).await,
                Err(e) => {
                    tail.finished = true;
                    let ev = Event::default().event("error").data(e.to_string());
                    return Some((Ok(ev), tail));
                }
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
