//! JSON-over-HTTP front end for tracking jobs and constraint-guided
//! re-estimation.
//!
//! | route | effect |
//! |---|---|
//! | `POST /jobs` | upload a WAV, signal CSV or spectrogram CSV (raw body), or JSON `{data \| data_base64, config}`; `201` with the job |
//! | `GET /jobs/{id}` | job status |
//! | `GET /jobs/{id}/spectrogram?maxw=&maxh=` | max-pooled display tile |
//! | `POST /jobs/{id}/track[?wait=true]` | `{L, constraints}`; `202` and runs in the background, or `200` with the result when waiting |
//! | `GET /jobs/{id}/result` | the last result, `202` while running |
//!
//! Errors are `{"error": {"kind", "message"}}`.

mod store;
mod tile;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::carve::MultiTraceResult;
use crate::config::RunConfig;
use crate::dp::ConstraintRegion;
use crate::error::Error;
use crate::ingest::spectrogram_from_bytes;
use crate::spectrogram::Axis;

pub use store::{Job, JobStatus, JobStore};
pub use tile::{pool_tile, Tile};

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub max_jobs: usize,
    pub max_body_bytes: usize,
    /// Directory served at `/` for the browser front end.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            max_jobs: 32,
            max_body_bytes: 64 * 1024 * 1024,
            static_dir: None,
        }
    }
}

#[derive(Clone)]
struct AppState {
    jobs: Arc<JobStore>,
}

/// Error body shared with the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        ErrorBody {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                kind: kind.to_string(),
                message: message.into(),
            },
        }
    }

    fn from_error(status: StatusCode, e: &Error) -> Self {
        ApiError {
            status,
            body: e.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no job {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.body }))).into_response()
    }
}

fn track_error_status(e: &Error) -> StatusCode {
    match e {
        Error::ConstraintUnsatisfiable { .. } | Error::InvalidConfig(_) | Error::DimensionMismatch { .. } => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

/// Public view of a job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub status: JobStatus,
    pub bins: usize,
    pub frames: usize,
    pub freq_axis: Axis,
    pub time_axis: Axis,
    pub traces: usize,
    pub constraints: Vec<ConstraintRegion>,
    pub has_result: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
    pub config: RunConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateJobRequest {
    #[serde(default)]
    data: Option<String>,
    #[serde(default)]
    data_base64: Option<String>,
    #[serde(default)]
    config: Option<RunConfig>,
}

/// Body of `POST /jobs/{id}/track`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRequest {
    #[serde(rename = "L", alias = "l", default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<usize>,
    #[serde(default)]
    pub constraints: Vec<ConstraintRegion>,
}

#[derive(Debug, Default, Deserialize)]
struct TrackQuery {
    #[serde(default)]
    wait: bool,
}

#[derive(Debug, Default, Deserialize)]
struct TileQuery {
    maxw: Option<usize>,
    maxh: Option<usize>,
}

pub fn router(cfg: &ServiceConfig) -> Router {
    let state = AppState {
        jobs: Arc::new(JobStore::new(cfg.max_jobs)),
    };
    let api = Router::new()
        .route("/jobs", post(create_job))
        .route("/jobs/:id", get(get_job))
        .route("/jobs/:id/spectrogram", get(get_spectrogram))
        .route("/jobs/:id/track", post(track))
        .route("/jobs/:id/result", get(get_result))
        .layer(DefaultBodyLimit::max(cfg.max_body_bytes))
        .with_state(state);
    match &cfg.static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the process receives Ctrl-C.
pub async fn serve(addr: SocketAddr, cfg: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(&cfg))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.trim_start().starts_with("application/json"))
}

async fn create_job(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let (payload, config) = if is_json(&headers) {
        let req: CreateJobRequest = serde_json::from_slice(&body).map_err(|e| bad_request(e.to_string()))?;
        let payload = match (req.data, req.data_base64) {
            (Some(text), None) => text.into_bytes(),
            (None, Some(b64)) => base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| bad_request(format!("data_base64: {e}")))?,
            _ => return Err(bad_request("exactly one of data and data_base64 is required")),
        };
        (payload, req.config.unwrap_or_default())
    } else {
        (body.to_vec(), RunConfig::default())
    };
    config
        .validate()
        .map_err(|e| ApiError::from_error(StatusCode::BAD_REQUEST, &e))?;
    let opts = config.signal_options();
    let loaded = tokio::task::spawn_blocking(move || spectrogram_from_bytes(&payload, &opts))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::from_error(StatusCode::BAD_REQUEST, &e))?;
    let job = app.jobs.insert(loaded.spectrogram, loaded.layout, config);
    Ok((StatusCode::CREATED, Json(job.view())).into_response())
}

async fn get_job(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    let job = app.jobs.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(job.view()))
}

async fn get_spectrogram(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TileQuery>,
) -> Result<Json<Tile>, ApiError> {
    let job = app.jobs.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let tile = tokio::task::spawn_blocking(move || pool_tile(job.spectrogram(), q.maxw, q.maxh))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(Json(tile))
}

fn result_response(result: &MultiTraceResult) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], result.to_json()).into_response()
}

async fn track(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TrackQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let job = app.jobs.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let req: TrackRequest = if body.iter().all(u8::is_ascii_whitespace) {
        TrackRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| bad_request(e.to_string()))?
    };
    let run = job
        .begin_run(req.traces, req.constraints)
        .map_err(|e| ApiError::from_error(track_error_status(&e), &e))?
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "conflict", format!("job {id} is already running")))?;
    let worker = tokio::task::spawn_blocking(move || run.execute());
    if !q.wait {
        return Ok((StatusCode::ACCEPTED, Json(job.view())).into_response());
    }
    let outcome = worker
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    match outcome {
        Ok(result) => Ok(result_response(&result)),
        Err(e) => Err(ApiError::from_error(track_error_status(&e), &e)),
    }
}

async fn get_result(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let job = app.jobs.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let snapshot = job.snapshot();
    match snapshot.status {
        JobStatus::Done => Ok(result_response(snapshot.result.as_ref().expect("done jobs hold a result"))),
        JobStatus::Running => Ok((StatusCode::ACCEPTED, Json(job.view())).into_response()),
        JobStatus::Failed => {
            let body = snapshot.error.expect("failed jobs hold an error");
            let status = if body.kind == "constraint_unsatisfiable" || body.kind == "invalid_config" {
                StatusCode::UNPROCESSABLE_ENTITY
            } else {
                StatusCode::INTERNAL_SERVER_ERROR
            };
            Err(ApiError { status, body })
        }
        JobStatus::Ready => Err(ApiError::new(StatusCode::NOT_FOUND, "no_result", format!("job {id} has not been tracked"))),
    }
}
