use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use dqops_core::cpclean::CleanError;
use dqops_core::jobs::{ErrorClass, JobError};
use serde_json::{Map, Value};

/// An error response: status plus a JSON body with at least `"error"`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: Map<String, Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        let mut body = Map::new();
        body.insert("error".into(), Value::String(message.into()));
        ApiError { status, body }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.body.insert(key.into(), value.into());
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    pub fn version_conflict(current: u64) -> Self {
        Self::conflict("version conflict").with("version", current)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(Value::Object(self.body))).into_response()
    }
}

impl From<JobError> for ApiError {
    fn from(e: JobError) -> Self {
        let message = e.to_string();
        match e {
            JobError::Clean(CleanError::WorldCapExceeded { worlds, cap }) => {
                ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, message)
                    .with("cap", cap)
                    .with("world_count", worlds)
            }
            e if e.class() == ErrorClass::TooLarge => ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, message),
            _ => ApiError::bad_request(message),
        }
    }
}

impl From<CleanError> for ApiError {
    fn from(e: CleanError) -> Self {
        match e {
            CleanError::UnknownCell(_) => ApiError::not_found(e.to_string()),
            e => JobError::from(e).into(),
        }
    }
}

/// Parses a JSON body, mapping any failure to 400.
pub fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid payload: {e}")))
}

pub fn ok_json(status: StatusCode, value: impl serde::Serialize) -> Response {
    (status, Json(value)).into_response()
}
