//! Asynchronous batch jobs. Results are the exact JSON the CLI prints.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::Response;
use dqops_core::ci::{CiLedger, ReusePolicy};
use dqops_core::jobs::{init_ledger, run_ci_commit, run_feasibility, CiCommitRequest, FeasibilityRequest};
use dqops_core::knn::KnnConfig;
use dqops_core::snoopy::EmbeddingSpec;
use dqops_core::Seed;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;

use crate::error::{ok_json, parse_body, ApiError};
use crate::{blocking, AppState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Feasibility,
    Ci,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Clone, Debug, Serialize)]
struct JobView {
    id: String,
    kind: JobKind,
    status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<Box<RawValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ledger: Option<CiLedger>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<Value>,
}

struct JobEntry {
    view: JobView,
    finished: Option<Instant>,
}

#[derive(Default)]
pub struct JobStore {
    jobs: Mutex<HashMap<String, JobEntry>>,
}

impl JobStore {
    fn start(&self, kind: JobKind) -> String {
        let id = uuid::Uuid::new_v4().to_string();
        let view = JobView {
            id: id.clone(),
            kind,
            status: JobStatus::Running,
            result: None,
            ledger: None,
            error: None,
        };
        self.jobs.lock().expect("job table").insert(id.clone(), JobEntry { view, finished: None });
        id
    }

    fn finish(&self, id: &str, outcome: Result<(Box<RawValue>, Option<CiLedger>), ApiError>) {
        let mut jobs = self.jobs.lock().expect("job table");
        let Some(entry) = jobs.get_mut(id) else { return };
        match outcome {
            Ok((result, ledger)) => {
                entry.view.status = JobStatus::Succeeded;
                entry.view.result = Some(result);
                entry.view.ledger = ledger;
            }
            Err(e) => {
                entry.view.status = JobStatus::Failed;
                let mut body = e.body;
                body.insert("status".into(), e.status.as_u16().into());
                entry.view.error = Some(Value::Object(body));
            }
        }
        entry.finished = Some(Instant::now());
    }
}

fn raw<T: Serialize>(value: &T) -> Result<Box<RawValue>, ApiError> {
    let text = serde_json::to_string(value).map_err(|e| ApiError::internal(e.to_string()))?;
    RawValue::from_string(text).map_err(|e| ApiError::internal(e.to_string()))
}

fn spawn_job<F>(app: Arc<AppState>, kind: JobKind, work: F) -> Response
where
    F: FnOnce() -> Result<(Box<RawValue>, Option<CiLedger>), ApiError> + Send + 'static,
{
    let id = app.jobs.start(kind);
    let job_id = id.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = work();
        app.jobs.finish(&job_id, outcome);
    });
    ok_json(StatusCode::ACCEPTED, serde_json::json!({ "job_id": id }))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingRef {
    Named(String),
    Uploaded { name: String, r#ref: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeasibilityPayload {
    train: String,
    validation: String,
    embeddings: Vec<EmbeddingRef>,
    #[serde(default)]
    noise_sweep: Vec<f64>,
    #[serde(default)]
    seed: Seed,
    #[serde(default)]
    knn: KnnConfig,
}

pub async fn submit_feasibility(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let p: FeasibilityPayload = parse_body(&body)?;
    if p.embeddings.is_empty() {
        return Err(ApiError::bad_request("at least one embedding is required"));
    }
    let mut embeddings = Vec::with_capacity(p.embeddings.len());
    for e in &p.embeddings {
        embeddings.push(match e {
            EmbeddingRef::Named(s) if s == "identity" => EmbeddingSpec::identity(),
            EmbeddingRef::Named(s) => return Err(ApiError::bad_request(format!("unknown embedding `{s}`"))),
            EmbeddingRef::Uploaded { name, r#ref } => {
                EmbeddingSpec::parse(&format!("{name}={}", app.store.artifact_path(r#ref)?.display()))
                    .map_err(|e| ApiError::bad_request(e.to_string()))?
            }
        });
    }
    let req = FeasibilityRequest {
        train: app.store.artifact_path(&p.train)?,
        validation: app.store.artifact_path(&p.validation)?,
        embeddings,
        noise_sweep: p.noise_sweep,
        seed: p.seed,
        knn: p.knn,
    };
    Ok(spawn_job(app.clone(), JobKind::Feasibility, move || {
        let report = run_feasibility(&req)?;
        Ok((raw(&report)?, None))
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CiPayload {
    ledger: CiLedger,
    test_set: String,
    old: String,
    new: String,
    condition: String,
}

pub async fn submit_ci(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let p: CiPayload = parse_body(&body)?;
    p.ledger.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let req = CiCommitRequest {
        test_set: app.store.artifact_path(&p.test_set)?,
        old: app.store.artifact_path(&p.old)?,
        new: app.store.artifact_path(&p.new)?,
        condition: p.condition,
    };
    let mut ledger = p.ledger;
    Ok(spawn_job(app.clone(), JobKind::Ci, move || {
        let report = run_ci_commit(&mut ledger, &req)?;
        Ok((raw(&report)?, Some(ledger)))
    }))
}

pub async fn get_job(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let mut jobs = app.jobs.jobs.lock().expect("job table");
    let Some(entry) = jobs.get(&id) else {
        return Err(ApiError::not_found(format!("unknown job `{id}`")));
    };
    if entry.finished.is_some_and(|t| t.elapsed() > app.config.job_ttl) {
        // keep a tombstone so the id answers 410 rather than 404
        let entry = jobs.get_mut(&id).expect("present");
        entry.view.result = None;
        entry.view.ledger = None;
        entry.view.error = None;
        return Err(ApiError::new(StatusCode::GONE, format!("job `{id}` has expired")));
    }
    Ok(ok_json(StatusCode::OK, &entry.view))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LedgerPayload {
    test_set: String,
    policy: ReusePolicy,
}

pub async fn create_ledger(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let p: LedgerPayload = parse_body(&body)?;
    let path = app.store.artifact_path(&p.test_set)?;
    blocking(move || {
        let ledger = init_ledger(&path, p.policy).map_err(ApiError::from)?;
        Ok(ok_json(StatusCode::CREATED, ledger))
    })
    .await
}
