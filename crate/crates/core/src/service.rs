//! HTTP endpoints over the workflow engine.
//!
//! | Method | Path | Body / query | Success |
//! |---|---|---|---|
//! | GET | `/tasks/next` | `?annotator=ID` | 200 stage payload, 204 when nothing is open |
//! | GET | `/progress` | `?annotator=ID` | 200 `{completed, assigned}` |
//! | POST | `/ratings/stage1` | `{task_id, annotator_id, interpretable, justification?}` | 200 `{state}` |
//! | POST | `/ratings/stage2` | `{task_id, annotator_id, ais, justification?}` | 200 `{state}` |
//! | POST | `/ratings/flag` | `{task_id, annotator_id, reason}` | 200 `{state}` |
//! | POST | `/datasets/import` | `{dataset_id, kind, path}` or `{dataset_id, kind, jsonl}` | 200 import summary |
//! | POST | `/assignments` | `{dataset_id, pool, seed?}` | 200 `{created}` |
//! | GET | `/datasets/{id}/ratings` | | 200 rating lines (`application/x-ndjson`) |
//!
//! Errors are `{"error": code, "message": text}` with 404 for unknown ids,
//! 409 for conflicting submissions, 422 for rejected requests and 400 for
//! unreadable corpora.

use std::io::Cursor;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::ingestion::{ImportSummary, IngestError};
use crate::model::{FlagReason, TaskKind};
use crate::workflow::{AssignmentState, Engine, Progress, WorkflowError};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: message.into(),
        }
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        use WorkflowError::*;
        let (status, code) = match &e {
            UnknownAnnotator(_) => (StatusCode::NOT_FOUND, "unknown_annotator"),
            UnknownDataset(_) => (StatusCode::NOT_FOUND, "unknown_dataset"),
            NoAssignment { .. } => (StatusCode::NOT_FOUND, "no_assignment"),
            DuplicateRating { .. } => (StatusCode::CONFLICT, "duplicate_rating"),
            StageOrderViolation { .. } => (StatusCode::CONFLICT, "stage_order_violation"),
            AlreadyComplete { .. } => (StatusCode::CONFLICT, "already_complete"),
            DuplicateTaskId(_) => (StatusCode::CONFLICT, "duplicate_task_id"),
            MissingJustification => (StatusCode::UNPROCESSABLE_ENTITY, "missing_justification"),
            PoolTooSmall { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "pool_too_small"),
            InvalidReplication => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_replication"),
            Ingest(IngestError::Io(_)) | Store(_) | Io(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
            Ingest(_) => (StatusCode::BAD_REQUEST, "ingest_error"),
        };
        ApiError {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.code, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs a blocking engine call (it may fsync) off the async workers.
async fn blocking<T, F>(engine: &Arc<Engine>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, WorkflowError> + Send + 'static,
{
    let engine = Arc::clone(engine);
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: e.to_string(),
        })?
        .map_err(ApiError::from)
}

#[derive(Debug, Deserialize)]
struct AnnotatorQuery {
    annotator: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage1Request {
    pub task_id: String,
    pub annotator_id: String,
    pub interpretable: bool,
    #[serde(default)]
    pub justification: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage2Request {
    pub task_id: String,
    pub annotator_id: String,
    pub ais: bool,
    #[serde(default)]
    pub justification: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlagRequest {
    pub task_id: String,
    pub annotator_id: String,
    pub reason: FlagReason,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub state: AssignmentState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportRequest {
    pub dataset_id: String,
    pub kind: TaskKind,
    /// Corpus file readable by the server.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Inline corpus text.
    #[serde(default)]
    pub jsonl: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignRequest {
    pub dataset_id: String,
    pub pool: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignResponse {
    pub created: usize,
}

async fn next_task(
    State(engine): State<Arc<Engine>>,
    Query(q): Query<AnnotatorQuery>,
) -> ApiResult<Response> {
    let payload = blocking(&engine, move |e| e.next_task(&q.annotator)).await?;
    Ok(match payload {
        Some(p) => Json(p).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn progress(
    State(engine): State<Arc<Engine>>,
    Query(q): Query<AnnotatorQuery>,
) -> ApiResult<Json<Progress>> {
    blocking(&engine, move |e| e.progress(&q.annotator)).await.map(Json)
}

async fn stage1(
    State(engine): State<Arc<Engine>>,
    Json(r): Json<Stage1Request>,
) -> ApiResult<Json<SubmitResponse>> {
    let state = blocking(&engine, move |e| {
        e.submit_stage1(&r.annotator_id, &r.task_id, r.interpretable, r.justification.as_deref())
    })
    .await?;
    Ok(Json(SubmitResponse { state }))
}

async fn stage2(
    State(engine): State<Arc<Engine>>,
    Json(r): Json<Stage2Request>,
) -> ApiResult<Json<SubmitResponse>> {
    let state = blocking(&engine, move |e| {
        e.submit_stage2(&r.annotator_id, &r.task_id, r.ais, r.justification.as_deref())
    })
    .await?;
    Ok(Json(SubmitResponse { state }))
}

async fn flag(
    State(engine): State<Arc<Engine>>,
    Json(r): Json<FlagRequest>,
) -> ApiResult<Json<SubmitResponse>> {
    let state = blocking(&engine, move |e| {
        e.submit_flag(&r.annotator_id, &r.task_id, r.reason)
    })
    .await?;
    Ok(Json(SubmitResponse { state }))
}

async fn import(
    State(engine): State<Arc<Engine>>,
    Json(r): Json<ImportRequest>,
) -> ApiResult<Json<ImportSummary>> {
    let summary = match (r.path, r.jsonl) {
        (Some(path), None) => {
            if !path.is_file() {
                return Err(ApiError::bad_request(format!("no such file: {}", path.display())));
            }
            blocking(&engine, move |e| e.import_dataset(&path, &r.dataset_id, r.kind)).await?
        }
        (None, Some(text)) => {
            blocking(&engine, move |e| {
                e.import_reader(Cursor::new(text), &r.dataset_id, r.kind)
            })
            .await?
        }
        _ => return Err(ApiError::bad_request("give exactly one of `path` and `jsonl`")),
    };
    Ok(Json(summary))
}

async fn assign(
    State(engine): State<Arc<Engine>>,
    Json(r): Json<AssignRequest>,
) -> ApiResult<Json<AssignResponse>> {
    let created =
        blocking(&engine, move |e| e.create_assignments(&r.dataset_id, &r.pool, r.seed)).await?;
    Ok(Json(AssignResponse { created }))
}

async fn dataset_ratings(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let body = blocking(&engine, move |e| {
        let mut out = Vec::new();
        e.export_ratings(&id, &mut out)?;
        Ok(out)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/tasks/next", get(next_task))
        .route("/progress", get(progress))
        .route("/ratings/stage1", post(stage1))
        .route("/ratings/stage2", post(stage2))
        .route("/ratings/flag", post(flag))
        .route("/datasets/import", post(import))
        .route("/assignments", post(assign))
        .route("/datasets/{id}/ratings", get(dataset_ratings))
        .with_state(engine)
}

/// Serves on an already bound listener until the process is stopped.
pub async fn serve(engine: Arc<Engine>, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(engine)).await
}
