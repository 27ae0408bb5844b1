use std::collections::HashSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use dqops_core::picker::{default_eta, load_stream, PickerDecision, PickerState, QueryLogEntry};
use dqops_core::Seed;
use serde::{Deserialize, Serialize};

use crate::error::{ok_json, parse_body, ApiError};
use crate::store::{LabelingState, SessionRecord, SessionState};
use crate::{blocking, AppState};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateLabeling {
    stream: String,
    m: Option<usize>,
    budget: u64,
    eta: Option<f64>,
    #[serde(default)]
    seed: Seed,
    q_floor: Option<f64>,
}

#[derive(Serialize)]
struct PendingView {
    item_id: String,
    q: f64,
}

#[derive(Serialize)]
struct LabelingView {
    id: String,
    kind: &'static str,
    version: u64,
    created_at: u64,
    updated_at: u64,
    models: usize,
    eta: f64,
    budget_remaining: u64,
    round: u64,
    queries: u64,
    stream_length: usize,
    cursor: usize,
    weights: Vec<f64>,
    pick: usize,
    picks: Vec<usize>,
    pending: Option<PendingView>,
    query_log: Vec<QueryLogEntry>,
}

fn state_of(record: &SessionRecord) -> &LabelingState {
    match &record.state {
        SessionState::Labeling(s) => s,
        SessionState::Cleaning(_) => unreachable!("checked by with_session"),
    }
}

fn view(record: &SessionRecord) -> LabelingView {
    let s = state_of(record);
    LabelingView {
        id: record.id.clone(),
        kind: "labeling",
        version: record.version,
        created_at: record.created_at,
        updated_at: record.updated_at,
        models: s.picker.models(),
        eta: s.picker.eta(),
        budget_remaining: s.picker.budget_remaining(),
        round: s.picker.round(),
        queries: s.picker.queries(),
        stream_length: s.stream.len(),
        cursor: s.cursor,
        weights: s.picker.weights().to_vec(),
        pick: s.picker.current_pick(),
        picks: s.picks.clone(),
        pending: s.picker.pending().map(|p| PendingView {
            item_id: p.item.id.clone(),
            q: p.q,
        }),
        query_log: s.picker.query_log().to_vec(),
    }
}

fn with_session<T>(
    app: &AppState,
    id: &str,
    f: impl FnOnce(&mut SessionRecord) -> Result<T, ApiError>,
) -> Result<T, ApiError> {
    let shared = app
        .store
        .session(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown labeling session `{id}`")))?;
    let mut record = shared.lock().expect("session lock");
    if !matches!(record.state, SessionState::Labeling(_)) {
        return Err(ApiError::not_found(format!("unknown labeling session `{id}`")));
    }
    f(&mut record)
}

pub async fn create(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateLabeling = parse_body(&body)?;
    let path = app.store.artifact_path(&req.stream)?;
    let app2 = app.clone();
    blocking(move || {
        let stream = load_stream(&path).map_err(|e| ApiError::bad_request(e.to_string()))?;
        if stream.is_empty() {
            return Err(ApiError::bad_request("stream has no items"));
        }
        let models = stream[0].predictions.len();
        if let Some(m) = req.m.filter(|&m| m != models) {
            return Err(ApiError::bad_request(format!("stream has {models} models, request says {m}")));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = stream.iter().find(|i| !seen.insert(i.id.as_str())) {
            return Err(ApiError::bad_request(format!("duplicate item id `{}`", dup.id)));
        }
        let eta = req.eta.unwrap_or_else(|| default_eta(models, req.budget, stream.len() as u64));
        let mut picker = PickerState::init(models, req.budget, eta, req.seed)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        if let Some(floor) = req.q_floor {
            picker = picker.with_floor(floor).map_err(|e| ApiError::bad_request(e.to_string()))?;
        }
        let record = SessionRecord::new(SessionState::Labeling(Box::new(LabelingState {
            picker,
            stream,
            cursor: 0,
            picks: Vec::new(),
        })));
        let v = view(&record);
        app2.store.insert(record)?;
        Ok(ok_json(StatusCode::CREATED, v))
    })
    .await
}

pub async fn get(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    with_session(&app, &id, |r| Ok(ok_json(StatusCode::OK, view(r))))
}

#[derive(Serialize)]
struct NextItem {
    item_id: String,
    predictions: Vec<usize>,
    round: u64,
    q: f64,
    version: u64,
}

/// Next item needing a label. Items the picker skips are observed on the
/// way (bumping the version); 204 once the stream is exhausted.
pub async fn next(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let app2 = app.clone();
    blocking(move || {
        with_session(&app2, &id, |r| {
            if let Some(p) = state_of(r).picker.pending() {
                let item = NextItem {
                    item_id: p.item.id.clone(),
                    predictions: p.item.predictions.clone(),
                    round: state_of(r).picker.round(),
                    q: p.q,
                    version: r.version,
                };
                return Ok(ok_json(StatusCode::OK, item));
            }
            let mut next = r.clone();
            let SessionState::Labeling(s) = &mut next.state else { unreachable!() };
            let start = s.cursor;
            let mut found = None;
            while s.cursor < s.stream.len() {
                let item = s.stream[s.cursor].clone();
                s.cursor += 1;
                let decision = s.picker.observe(&item).map_err(|e| ApiError::bad_request(e.to_string()))?;
                if let PickerDecision::Query { q } = decision {
                    found = Some((item, q, s.picker.round()));
                    break;
                }
            }
            if s.cursor == start {
                return Ok(StatusCode::NO_CONTENT.into_response());
            }
            next.touch();
            app2.store.persist(&next)?;
            *r = next;
            Ok(match found {
                Some((item, q, round)) => ok_json(
                    StatusCode::OK,
                    NextItem {
                        item_id: item.id,
                        predictions: item.predictions,
                        round,
                        q,
                        version: r.version,
                    },
                ),
                None => StatusCode::NO_CONTENT.into_response(),
            })
        })
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRequest {
    item_id: String,
    label: usize,
    expected_version: u64,
}

#[derive(Serialize)]
struct LabelResponse {
    pick: usize,
    weights: Vec<f64>,
    budget_remaining: u64,
    version: u64,
}

pub async fn label(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let req: LabelRequest = parse_body(&body)?;
    let app2 = app.clone();
    blocking(move || {
        with_session(&app2, &id, |r| {
            if r.version != req.expected_version {
                return Err(ApiError::version_conflict(r.version));
            }
            if !state_of(r).stream.iter().any(|i| i.id == req.item_id) {
                return Err(ApiError::not_found(format!("unknown item `{}`", req.item_id)));
            }
            let mut next = r.clone();
            let SessionState::Labeling(s) = &mut next.state else { unreachable!() };
            s.picker
                .feed_label(&req.item_id, req.label)
                .map_err(|e| ApiError::conflict(e.to_string()))?;
            let pick = s.picker.current_pick();
            s.picks.push(pick);
            let response = LabelResponse {
                pick,
                weights: s.picker.weights().to_vec(),
                budget_remaining: s.picker.budget_remaining(),
                version: 0,
            };
            next.touch();
            app2.store.persist(&next)?;
            *r = next;
            Ok(ok_json(StatusCode::OK, LabelResponse { version: r.version, ..response }))
        })
    })
    .await
}
