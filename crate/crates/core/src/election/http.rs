//! JSON over HTTP for the voter interface and operators.

use std::net::SocketAddr;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::service::{ElectionService, ElicitationRequest, VoteRequest};
use super::{InstanceSpec, ServiceError};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, body) = match &self {
            ServiceError::UnknownInstance(_) => (StatusCode::NOT_FOUND, json!({"error": "unknown_instance", "message": self.to_string()})),
            ServiceError::NotAssigned(_) => (StatusCode::FORBIDDEN, json!({"error": "not_assigned", "message": self.to_string()})),
            ServiceError::NoOpenInstance => (StatusCode::SERVICE_UNAVAILABLE, json!({"error": "no_open_instance", "message": self.to_string()})),
            ServiceError::InvalidSpec(_) => (StatusCode::UNPROCESSABLE_ENTITY, json!({"error": "invalid_spec", "message": self.to_string()})),
            ServiceError::Rejected(r) => {
                let status = match r {
                    super::Rejection::DuplicateSubmission
                    | super::Rejection::StalePoint { .. }
                    | super::Rejection::InstanceClosed => StatusCode::CONFLICT,
                    super::Rejection::UnknownSet { .. } => StatusCode::NOT_FOUND,
                    _ => StatusCode::UNPROCESSABLE_ENTITY,
                };
                (status, json!({"error": "rejected", "rejection": r, "refresh": r.refresh()}))
            }
            ServiceError::Storage(_) | ServiceError::Corrupt(_) => {
                log::error!("{self}");
                (StatusCode::INTERNAL_SERVER_ERROR, json!({"error": "internal", "message": self.to_string()}))
            }
        };
        (status, Json(body)).into_response()
    }
}

type Res<T> = Result<T, ServiceError>;

async fn blocking<T, F>(f: F) -> Res<T>
where
    F: FnOnce() -> Res<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ServiceError::Corrupt(format!("worker panicked: {e}"))))
}

#[derive(Deserialize)]
struct SessionBody {
    session: String,
}

#[derive(Deserialize)]
struct SessionQuery {
    session: String,
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default)]
    set: usize,
    #[serde(default)]
    format: Option<String>,
}

#[derive(Deserialize)]
struct FeedbackBody {
    session: String,
    text: String,
}

async fn create(State(s): State<ElectionService>, Json(spec): Json<InstanceSpec>) -> Res<impl IntoResponse> {
    let id = blocking(move || s.create_instance(spec)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

async fn list(State(s): State<ElectionService>) -> impl IntoResponse {
    Json(s.list())
}

async fn summary(State(s): State<ElectionService>, Path(id): Path<String>) -> Res<impl IntoResponse> {
    Ok(Json(s.summary(&id)?))
}

async fn assign(State(s): State<ElectionService>, Json(b): Json<SessionBody>) -> Res<impl IntoResponse> {
    let id = blocking(move || s.assign_session(&b.session)).await?;
    Ok(Json(json!({ "instance": id })))
}

async fn current(
    State(s): State<ElectionService>,
    Path(id): Path<String>,
    Query(q): Query<SessionQuery>,
) -> Res<impl IntoResponse> {
    Ok(Json(s.get_current(&id, &q.session)?))
}

async fn vote(
    State(s): State<ElectionService>,
    Path(id): Path<String>,
    Json(v): Json<VoteRequest>,
) -> Res<impl IntoResponse> {
    Ok(Json(blocking(move || s.submit_vote(&id, v)).await?))
}

async fn elicit(
    State(s): State<ElectionService>,
    Path(id): Path<String>,
    Json(e): Json<ElicitationRequest>,
) -> Res<impl IntoResponse> {
    blocking(move || s.submit_elicitation(&id, e)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn export(
    State(s): State<ElectionService>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> Res<Response> {
    let format = q.format.unwrap_or_else(|| "jsonl".into());
    let mut buf = Vec::new();
    let content_type = match format.as_str() {
        "events" => {
            for r in s.events(&id)? {
                serde_json::to_writer(&mut buf, &r).map_err(|e| ServiceError::Corrupt(e.to_string()))?;
                buf.push(b'\n');
            }
            "application/x-ndjson"
        }
        "tsv" => {
            s.export(&id, q.set)?.write_tsv(&mut buf)?;
            "text/tab-separated-values"
        }
        "jsonl" => {
            s.export(&id, q.set)?.write_jsonl(&mut buf)?;
            "application/x-ndjson"
        }
        other => {
            return Ok((
                StatusCode::BAD_REQUEST,
                Json(json!({"error": "bad_format", "message": format!("unknown format {other:?}")})),
            )
                .into_response())
        }
    };
    Ok(([(header::CONTENT_TYPE, content_type)], buf).into_response())
}

async fn close(State(s): State<ElectionService>, Path(id): Path<String>) -> Res<impl IntoResponse> {
    let view = blocking(move || s.close(&id)).await?;
    Ok(Json((*view).clone()))
}

async fn feedback(State(s): State<ElectionService>, Json(b): Json<FeedbackBody>) -> Res<impl IntoResponse> {
    let seq = blocking(move || s.feedback(&b.session, &b.text)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "seq": seq }))))
}

pub fn router(service: ElectionService) -> Router {
    Router::new()
        .route("/instances", post(create).get(list))
        .route("/instances/{id}", get(summary))
        .route("/assign", post(assign))
        .route("/instances/{id}/current", get(current))
        .route("/instances/{id}/votes", post(vote))
        .route("/instances/{id}/elicitation", post(elicit))
        .route("/instances/{id}/export", get(export))
        .route("/instances/{id}/close", post(close))
        .route("/feedback", post(feedback))
        .with_state(service)
}

/// Serves until interrupted.
pub async fn serve(service: ElectionService, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
