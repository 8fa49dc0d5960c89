//! HTTP surface of the audit service. The UI bundle, when given, is served
//! from the same origin for every path outside `/api`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use relwitness::auditkit::{AnnotationRequest, AuditService, ServiceError};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let code = match self.0 {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Malformed(_) => "malformed",
            ServiceError::UnknownAnnotator(_) => "unknown_annotator",
            ServiceError::Store(_) | ServiceError::Payload(_) => "internal",
        };
        (
            status,
            Json(json!({ "error": { "code": code, "message": self.0.to_string() } })),
        )
            .into_response()
    }
}

type Shared = Arc<AuditService>;

#[derive(Deserialize)]
struct TaskQuery {
    annotator: String,
}

async fn tasks(State(s): State<Shared>, Query(q): Query<TaskQuery>) -> Result<Response, ApiError> {
    Ok(Json(s.list_tasks(&q.annotator)?).into_response())
}

async fn candidate(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let payload = tokio::task::spawn_blocking(move || s.get_candidate(&id))
        .await
        .expect("payload task completes")?;
    Ok(Json(payload).into_response())
}

async fn annotation(State(s): State<Shared>, Json(req): Json<AnnotationRequest>) -> Result<Response, ApiError> {
    let stored = tokio::task::spawn_blocking(move || s.post_annotation(req))
        .await
        .expect("store task completes")?;
    Ok((StatusCode::CREATED, Json(stored)).into_response())
}

async fn progress(State(s): State<Shared>) -> Response {
    Json(s.progress()).into_response()
}

pub fn router(service: Shared, ui: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/tasks", get(tasks))
        .route("/api/candidate/{id}", get(candidate))
        .route("/api/annotation", post(annotation))
        .route("/api/progress", get(progress))
        .with_state(service);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
