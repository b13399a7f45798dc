use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use facegate::audit::journal::{JournalEntry, CONSENSUS_SCHEMA, JOURNAL_VERSION};
use facegate::audit::{AnnotationRecord, Consensus, FieldError};
use facegate::providers::PredictionRecord;
use facegate::records::write_to;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agreement::{agreement, FIELDS};
use crate::board::{BoardError, TaskStatus};
use crate::AppState;

pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    fields: Vec<FieldError>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self { status, kind, message: message.into(), fields: Vec::new() }
    }
}

impl From<BoardError> for ApiError {
    fn from(e: BoardError) -> Self {
        let message = e.to_string();
        match e {
            BoardError::UnknownTask(_) => Self::new(StatusCode::NOT_FOUND, "unknown_task", message),
            BoardError::Invalid(fields) => {
                Self { status: StatusCode::UNPROCESSABLE_ENTITY, kind: "invalid_record", message, fields }
            }
            BoardError::Conflict(_) => Self::new(StatusCode::CONFLICT, "conflict", message),
            BoardError::DanglingReference(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "dangling_reference", message)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.kind, "message": self.message, "fields": self.fields });
        (self.status, Json(body)).into_response()
    }
}

type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/v1/tasks", get(list_tasks))
        .route("/v1/tasks/{id}", get(get_task))
        .route("/v1/tasks/{id}/annotations", post(post_annotation))
        .route("/v1/tasks/{id}/consensus", get(get_consensus))
        .route("/v1/tasks/{id}/reopen", post(reopen))
        .route("/v1/images/{id}", get(get_image))
        .route("/v1/images/{id}/overlay", get(get_overlay))
        .route("/v1/agreement", get(get_agreement))
        .route("/v1/export", get(export))
        .route("/v1/hints", post(post_hints))
        .with_state(state)
}

/// Decodes a JSON body, naming the offending field on failure.
fn decode<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        let missing = message.strip_prefix("missing field `").and_then(|m| m.split('`').next());
        let field = match (path.as_str(), missing) {
            (".", Some(name)) => name.to_string(),
            (".", None) => "body".to_string(),
            (p, Some(name)) => format!("{p}.{name}"),
            (p, None) => p.to_string(),
        };
        let mut err = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_record", message.clone());
        err.fields.push(FieldError { field, message });
        err
    })
}

async fn append(state: &AppState, entry: JournalEntry) -> Result<(), ApiError> {
    // Single writer: validation, append and apply happen under the store lock.
    let mut store = state.store.lock().await;
    state.board.read().await.check(&entry)?;
    store.append(&entry).map_err(|e| {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "write_failed", format!("journal write failed: {e}"))
    })?;
    state.board.write().await.apply(&entry)?;
    Ok(())
}

#[derive(Deserialize)]
struct StatusFilter {
    status: Option<TaskStatus>,
}

async fn list_tasks(State(state): Shared, Query(q): Query<StatusFilter>) -> impl IntoResponse {
    let board = state.board.read().await;
    let tasks: Vec<_> =
        board.tasks().map(|t| board.view(t)).filter(|v| q.status.is_none_or(|s| v.status == s)).collect();
    Json(tasks)
}

async fn get_task(State(state): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let board = state.board.read().await;
    Ok(Json(board.view(board.task(&id)?)))
}

async fn post_annotation(
    State(state): Shared,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    state.board.read().await.task(&id)?;
    let record: AnnotationRecord = decode(&body)?;
    append(&state, JournalEntry::Annotation { task_id: id, record: record.clone() }).await?;
    Ok((StatusCode::CREATED, Json(record)))
}

#[derive(Serialize)]
struct ConsensusView {
    task_id: String,
    status: TaskStatus,
    round: u32,
    annotators: Vec<String>,
    needed: usize,
    consensus: Option<Consensus>,
    /// Vote counts per coded value, for reviewing disagreements.
    votes: BTreeMap<&'static str, BTreeMap<String, usize>>,
}

async fn get_consensus(State(state): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let board = state.board.read().await;
    let task = board.task(&id)?;
    let mut votes = BTreeMap::new();
    for (name, extract) in FIELDS {
        let mut counts = BTreeMap::new();
        for r in task.records.values() {
            if let Some(v) = extract(r) {
                *counts.entry(v).or_insert(0) += 1;
            }
        }
        if !counts.is_empty() {
            votes.insert(name, counts);
        }
    }
    Ok(Json(ConsensusView {
        task_id: task.task_id.clone(),
        status: board.status(task),
        round: task.round,
        annotators: task.records.keys().cloned().collect(),
        needed: board.annotators(),
        consensus: board.consensus(task),
        votes,
    }))
}

async fn reopen(State(state): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    append(&state, JournalEntry::Reopen { task_id: id.clone() }).await?;
    let board = state.board.read().await;
    Ok(Json(board.view(board.task(&id)?)))
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

async fn get_image(State(state): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let entry = state
        .manifest
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_image", format!("unknown image {id}")))?;
    let path = state.manifest.image_path(entry);
    let bytes = tokio::task::spawn_blocking({
        let path = path.clone();
        move || std::fs::read(path)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
    .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "image_unreadable", format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes))
}

async fn get_overlay(State(state): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let entry = state
        .manifest
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_image", format!("unknown image {id}")))?;
    let board = state.board.read().await;
    let regions: Vec<_> = board.regions_of(&id).into_iter().map(|t| board.view(t)).collect();
    Ok(Json(json!({
        "image_id": id,
        "width": entry.width,
        "height": entry.height,
        "regions": regions,
        "faces": board.faces_of(&id),
    })))
}

async fn get_agreement(State(state): Shared) -> impl IntoResponse {
    Json(agreement(&*state.board.read().await))
}

async fn export(State(state): Shared) -> Result<impl IntoResponse, ApiError> {
    let records = state.board.read().await.export();
    let mut out = Vec::new();
    write_to(&mut out, CONSENSUS_SCHEMA, JOURNAL_VERSION, &records)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], out))
}

async fn post_hints(State(state): Shared, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let predictions: Vec<PredictionRecord> = decode(&body)?;
    let hints = state.board.read().await.hints_from_predictions(&predictions)?;
    let n = hints.len();
    append(&state, JournalEntry::Hints { hints }).await?;
    Ok(Json(json!({ "hints": n })))
}
