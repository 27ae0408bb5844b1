use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use dqops_core::cpclean::{CellId, RepairGenerator, RepairRecord};
use dqops_core::jobs::{open_cleaning_session, CandidateSource};
use dqops_core::knn::KnnConfig;
use serde::{Deserialize, Serialize};

use crate::error::{ok_json, parse_body, ApiError};
use crate::store::{CleaningState, SessionRecord, SessionState};
use crate::{blocking, AppState};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateCleaning {
    data: String,
    candidates: Option<String>,
    #[serde(default)]
    generators: Vec<String>,
    validation: String,
    #[serde(default)]
    knn: KnnConfig,
    world_cap: Option<u64>,
}

#[derive(Serialize)]
pub struct CleaningView {
    pub id: String,
    pub kind: &'static str,
    pub version: u64,
    pub created_at: u64,
    pub updated_at: u64,
    pub world_count: u64,
    pub entropy: f64,
    pub certain_count: usize,
    pub validation_size: usize,
    pub dirty_cells: Vec<CellId>,
    pub log: Vec<RepairRecord>,
    pub entropy_trace: Vec<f64>,
}

fn view(record: &SessionRecord) -> Result<CleaningView, ApiError> {
    let SessionState::Cleaning(state) = &record.state else {
        return Err(ApiError::not_found(format!("unknown cleaning session `{}`", record.id)));
    };
    Ok(CleaningView {
        id: record.id.clone(),
        kind: "cleaning",
        version: record.version,
        created_at: record.created_at,
        updated_at: record.updated_at,
        world_count: state.metrics.world_count,
        entropy: state.metrics.entropy,
        certain_count: state.metrics.certain_count,
        validation_size: state.session.validation().len(),
        dirty_cells: state.session.dirty_cells(),
        log: state.session.log().to_vec(),
        entropy_trace: state.session.entropy_trace().to_vec(),
    })
}

pub async fn create(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateCleaning = parse_body(&body)?;
    let candidates = match (&req.candidates, req.generators.is_empty()) {
        (Some(r), true) => CandidateSource::File(app.store.artifact_path(r)?),
        (None, false) => CandidateSource::Generators(
            req.generators
                .iter()
                .map(|g| g.parse::<RepairGenerator>().map_err(|e| ApiError::bad_request(e.to_string())))
                .collect::<Result<_, _>>()?,
        ),
        _ => return Err(ApiError::bad_request("give exactly one of `candidates` or `generators`")),
    };
    let data = app.store.artifact_path(&req.data)?;
    let validation = app.store.artifact_path(&req.validation)?;
    let cap = req.world_cap.unwrap_or(app.config.world_cap);
    let knn = req.knn;
    let app2 = app.clone();
    blocking(move || {
        let session = open_cleaning_session(&data, &candidates, &validation, knn, cap)?;
        let metrics = session.metrics()?;
        let record = SessionRecord::new(SessionState::Cleaning(Box::new(CleaningState { session, metrics })));
        let v = view(&record)?;
        app2.store.insert(record)?;
        Ok(ok_json(StatusCode::CREATED, v))
    })
    .await
}

fn with_session<T>(
    app: &AppState,
    id: &str,
    f: impl FnOnce(&mut SessionRecord) -> Result<T, ApiError>,
) -> Result<T, ApiError> {
    let shared = app
        .store
        .session(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown cleaning session `{id}`")))?;
    let mut record = shared.lock().expect("session lock");
    if !matches!(record.state, SessionState::Cleaning(_)) {
        return Err(ApiError::not_found(format!("unknown cleaning session `{id}`")));
    }
    f(&mut record)
}

pub async fn get(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    with_session(&app, &id, |r| Ok(ok_json(StatusCode::OK, view(r)?)))
}

pub async fn suggestion(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    blocking(move || {
        with_session(&app, &id, |r| {
            let SessionState::Cleaning(state) = &r.state else { unreachable!() };
            Ok(match state.session.suggestion()? {
                Some(s) => ok_json(StatusCode::OK, s),
                None => StatusCode::NO_CONTENT.into_response(),
            })
        })
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RepairRequest {
    cell: CellId,
    value: f64,
    expected_version: u64,
}

#[derive(Serialize)]
struct RepairResponse {
    entropy: f64,
    certain_count: usize,
    world_count: u64,
    version: u64,
}

pub async fn repair(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: RepairRequest = parse_body(&body)?;
    let app2 = app.clone();
    blocking(move || {
        with_session(&app2, &id, |r| {
            if r.version != req.expected_version {
                return Err(ApiError::version_conflict(r.version));
            }
            let mut next = r.clone();
            let SessionState::Cleaning(state) = &mut next.state else { unreachable!() };
            let metrics = state.session.apply_repair(req.cell, req.value)?;
            state.metrics = metrics;
            next.touch();
            app2.store.persist(&next)?;
            *r = next;
            Ok(ok_json(
                StatusCode::OK,
                RepairResponse {
                    entropy: metrics.entropy,
                    certain_count: metrics.certain_count,
                    world_count: metrics.world_count,
                    version: r.version,
                },
            ))
        })
    })
    .await
}
