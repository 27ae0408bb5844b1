//! HTTP front end for interactive cleaning and labeling sessions, plus
//! asynchronous feasibility and CI jobs.
//!
//! Uploads are content-addressed (`PUT /artifacts`) and referenced by their
//! SHA-256 hex digest everywhere else. Sessions are persisted after every
//! mutation and reloaded on startup. Mutating session calls carry an
//! `expected_version`; a stale version is answered with 409.

mod cleaning;
mod error;
mod jobs;
mod labeling;
mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::Router;
use dqops_core::cpclean::DEFAULT_WORLD_CAP;
use serde_json::json;

pub use error::ApiError;
pub use store::{SessionRecord, SessionState, Store};

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// How long finished job results stay retrievable.
    pub job_ttl: Duration,
    /// Default possible-world cap for cleaning sessions.
    pub world_cap: u64,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            job_ttl: Duration::from_secs(3600),
            world_cap: DEFAULT_WORLD_CAP,
        }
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    pub store: Store,
    jobs: jobs::JobStore,
}

impl AppState {
    pub fn open(config: ServiceConfig) -> std::io::Result<Arc<Self>> {
        let store = Store::open(&config.data_dir)?;
        Ok(Arc::new(AppState {
            config,
            store,
            jobs: jobs::JobStore::default(),
        }))
    }
}

/// Runs `f` on the blocking pool.
pub(crate) async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { axum::Json(json!({"status": "ok"})) }))
        .route("/artifacts", put(put_artifact).post(put_artifact))
        .route("/artifacts/{reference}", get(get_artifact))
        .route("/sessions/cleaning", post(cleaning::create))
        .route("/sessions/cleaning/{id}", get(cleaning::get))
        .route("/sessions/cleaning/{id}/suggestion", get(cleaning::suggestion))
        .route("/sessions/cleaning/{id}/repairs", post(cleaning::repair))
        .route("/sessions/labeling", post(labeling::create))
        .route("/sessions/labeling/{id}", get(labeling::get))
        .route("/sessions/labeling/{id}/next", get(labeling::next))
        .route("/sessions/labeling/{id}/labels", post(labeling::label))
        .route("/ci/ledger", post(jobs::create_ledger))
        .route("/jobs/feasibility", post(jobs::submit_feasibility))
        .route("/jobs/ci", post(jobs::submit_ci))
        .route("/jobs/{id}", get(jobs::get_job))
        .with_state(state)
}

async fn put_artifact(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let size = body.len();
    let app2 = app.clone();
    let (reference, created) = blocking(move || {
        app2.store
            .put_artifact(&body)
            .map_err(|e| ApiError::internal(format!("storing artifact: {e}")))
    })
    .await?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok(error::ok_json(status, json!({"ref": reference, "size": size})))
}

async fn get_artifact(State(app): State<Arc<AppState>>, Path(reference): Path<String>) -> Result<Response, ApiError> {
    match app.store.read_artifact(&reference) {
        Some(bytes) => Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response()),
        None => Err(ApiError::not_found(format!("unknown artifact `{reference}`"))),
    }
}

/// Serves on `addr` until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let state = AppState::open(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
