//! HTTP API over [`Service`]. Engine calls run on the blocking pool.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use docent_core::corpus::ImportManifest;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ops::{AskRequest, ImportRequest, OpError, Service, UploadRequest, RETRY_HINT};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobResponse {
    pub job_id: String,
    pub complete: bool,
    pub manifest: ImportManifest,
}

pub struct AppState {
    service: Service,
    jobs: Mutex<HashMap<String, ImportManifest>>,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new(service: Service) -> Arc<Self> {
        Arc::new(Self {
            service,
            jobs: Mutex::new(HashMap::new()),
            next_job: AtomicU64::new(1),
        })
    }

    fn set_job(&self, id: &str, manifest: &ImportManifest) {
        self.jobs
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id.to_string(), manifest.clone());
    }

    fn job(&self, id: &str) -> Option<ImportManifest> {
        self.jobs.lock().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }
}

pub struct ApiError(OpError);

impl From<OpError> for ApiError {
    fn from(e: OpError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let msg = self.0.to_string();
        let status = match &self.0 {
            OpError::BadRequest(_) => StatusCode::BAD_REQUEST,
            OpError::NotFound(_) => StatusCode::NOT_FOUND,
            OpError::Conflict(_) => StatusCode::CONFLICT,
            OpError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            OpError::Upstream(_) => StatusCode::BAD_GATEWAY,
            OpError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::BAD_GATEWAY {
            return (
                status,
                [(header::RETRY_AFTER, "5")],
                Json(json!({"error": msg, "retryable": true, "hint": RETRY_HINT})),
            )
                .into_response();
        }
        if status.is_server_error() {
            tracing::error!(error = %msg, "request failed");
        }
        (status, Json(json!({"error": msg}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, OpError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| OpError::Internal(format!("worker failed: {e}")))?
        .map_err(ApiError)
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, OpError> {
    serde_json::from_slice(body).map_err(|e| OpError::BadRequest(format!("malformed body: {e}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/papers", get(list_papers).post(post_papers))
        .route("/imports/{id}", get(get_import))
        .route("/ask", post(ask))
        .route("/papers/{id}/refgraph", get(refgraph))
        .with_state(state)
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Value> {
    let papers = state.service.engine.corpus().len();
    Json(json!({"status": "ok", "papers": papers}))
}

async fn list_papers(State(state): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let s = state.service.clone();
    let r = blocking(move || Ok(s.papers())).await?;
    Ok(Json(serde_json::to_value(r).expect("serializable")))
}

#[derive(Debug, Default, Deserialize)]
struct PapersQuery {
    #[serde(default)]
    wait: bool,
}

async fn post_papers(
    State(state): State<Arc<AppState>>,
    Query(q): Query<PapersQuery>,
    body: Bytes,
) -> ApiResult<Response> {
    let value: Value = parse_body(&body)?;
    if value.get("urls").is_some() {
        let req: ImportRequest = parse_body(&body)?;
        if req.urls.is_empty() {
            return Err(OpError::BadRequest("empty url list".into()).into());
        }
        let id = format!("job-{}", state.next_job.fetch_add(1, Ordering::SeqCst));
        state.set_job(&id, &ImportManifest::pending(&req.urls));
        let worker = state.clone();
        let job_id = id.clone();
        let task = tokio::task::spawn_blocking(move || {
            let result = worker
                .service
                .import(&req.urls, |m| worker.set_job(&job_id, m));
            match result {
                Ok(m) => worker.set_job(&job_id, &m),
                Err(e) => {
                    let mut m = ImportManifest::pending(&req.urls);
                    for entry in &mut m.entries {
                        entry.status = docent_core::corpus::ImportStatus::Failed;
                        entry.error = Some(e.to_string());
                    }
                    worker.set_job(&job_id, &m);
                }
            }
        });
        let status = if q.wait {
            task.await
                .map_err(|e| OpError::Internal(format!("import worker failed: {e}")))?;
            StatusCode::OK
        } else {
            StatusCode::ACCEPTED
        };
        let manifest = state.job(&id).expect("job registered");
        let body = JobResponse {
            job_id: id,
            complete: manifest.is_complete(),
            manifest,
        };
        return Ok((status, Json(body)).into_response());
    }
    let req: UploadRequest = parse_body(&body)?;
    let s = state.service.clone();
    let r = blocking(move || s.ingest(req)).await?;
    Ok((StatusCode::CREATED, Json(r)).into_response())
}

async fn get_import(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<JobResponse>> {
    let manifest = state
        .job(&id)
        .ok_or_else(|| OpError::NotFound(format!("unknown import job {id}")))?;
    Ok(Json(JobResponse {
        job_id: id,
        complete: manifest.is_complete(),
        manifest,
    }))
}

async fn ask(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: AskRequest = parse_body(&body)?;
    let s = state.service.clone();
    let r = blocking(move || s.ask(&req)).await?;
    Ok(Json(r).into_response())
}

async fn refgraph(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let k = match params.get("k") {
        None => None,
        Some(raw) => Some(
            raw.parse::<usize>()
                .map_err(|_| OpError::BadRequest(format!("k must be a positive integer, got {raw:?}")))?,
        ),
    };
    if k == Some(0) {
        return Err(OpError::BadRequest("k must be positive".into()).into());
    }
    let s = state.service.clone();
    let r = blocking(move || s.refgraph(&id, k)).await?;
    Ok(Json(r).into_response())
}

/// Serves the API on `addr` until `shutdown` resolves.
pub async fn serve(
    state: Arc<AppState>,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
    on_bound: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
