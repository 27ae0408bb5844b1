//! On-disk layout under the data directory:
//! `artifacts/<sha256>` for uploads, `sessions/<id>.json` for snapshots.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use dqops_core::cpclean::{CleaningSession, SessionMetrics};
use dqops_core::picker::{PickerState, StreamItem};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ApiError;

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CleaningState {
    pub session: CleaningSession,
    pub metrics: SessionMetrics,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelingState {
    pub picker: PickerState,
    pub stream: Vec<StreamItem>,
    /// Index of the next stream item to observe.
    pub cursor: usize,
    /// Pick after every received label.
    pub picks: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "lowercase")]
pub enum SessionState {
    Cleaning(Box<CleaningState>),
    Labeling(Box<LabelingState>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub version: u64,
    pub created_at: u64,
    pub updated_at: u64,
    #[serde(flatten)]
    pub state: SessionState,
}

impl SessionRecord {
    pub fn new(state: SessionState) -> Self {
        let now = now_millis();
        SessionRecord {
            id: uuid::Uuid::new_v4().to_string(),
            version: 1,
            created_at: now,
            updated_at: now,
            state,
        }
    }

    pub fn touch(&mut self) {
        self.version += 1;
        self.updated_at = now_millis();
    }
}

pub type SharedRecord = Arc<Mutex<SessionRecord>>;

pub struct Store {
    root: PathBuf,
    sessions: Mutex<HashMap<String, SharedRecord>>,
}

fn is_hex_ref(r: &str) -> bool {
    r.len() == 64 && r.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl Store {
    /// Opens (creating if needed) a data directory and loads saved sessions.
    pub fn open(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root.join("artifacts"))?;
        fs::create_dir_all(root.join("sessions"))?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(root.join("sessions"))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let record: SessionRecord = serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
            sessions.insert(record.id.clone(), Arc::new(Mutex::new(record)));
        }
        Ok(Store {
            root: root.to_path_buf(),
            sessions: Mutex::new(sessions),
        })
    }

    pub fn put_artifact(&self, body: &[u8]) -> io::Result<(String, bool)> {
        let reference = hex::encode(Sha256::digest(body));
        let path = self.root.join("artifacts").join(&reference);
        if path.exists() {
            return Ok((reference, false));
        }
        let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4()));
        fs::write(&tmp, body)?;
        fs::rename(&tmp, &path)?;
        Ok((reference, true))
    }

    /// Path of an uploaded artifact; 400 if the reference is unknown.
    pub fn artifact_path(&self, reference: &str) -> Result<PathBuf, ApiError> {
        let path = self.root.join("artifacts").join(reference);
        if is_hex_ref(reference) && path.is_file() {
            Ok(path)
        } else {
            Err(ApiError::bad_request(format!("unknown artifact `{reference}`")))
        }
    }

    pub fn read_artifact(&self, reference: &str) -> Option<Vec<u8>> {
        if !is_hex_ref(reference) {
            return None;
        }
        fs::read(self.root.join("artifacts").join(reference)).ok()
    }

    pub fn session(&self, id: &str) -> Option<SharedRecord> {
        self.sessions.lock().expect("session index").get(id).cloned()
    }

    pub fn insert(&self, record: SessionRecord) -> Result<SharedRecord, ApiError> {
        self.persist(&record)?;
        let shared = Arc::new(Mutex::new(record.clone()));
        self.sessions
            .lock()
            .expect("session index")
            .insert(record.id.clone(), shared.clone());
        Ok(shared)
    }

    /// Writes a snapshot atomically (temp file + rename).
    pub fn persist(&self, record: &SessionRecord) -> Result<(), ApiError> {
        let dir = self.root.join("sessions");
        let path = dir.join(format!("{}.json", record.id));
        let tmp = dir.join(format!("{}.json.tmp", record.id));
        let bytes = serde_json::to_vec(record).map_err(|e| ApiError::internal(e.to_string()))?;
        fs::write(&tmp, bytes)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| ApiError::internal(format!("persisting session: {e}")))
    }
}
