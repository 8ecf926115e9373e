// Copyright 2026 The stv-audit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! HTTP/JSON front end for audit sessions.
//!
//! | Method | Path | Body | Reply |
//! |---|---|---|---|
//! | POST | `/sessions` | [`CreateRequest`] | [`CreateReply`] |
//! | GET | `/sessions/{id}/task` | | [`Task`] |
//! | POST | `/sessions/{id}/entries/{index}` | [`SubmitRequest`] | [`SubmitReply`] |
//! | GET | `/sessions/{id}/stats` | | [`StatsSnapshot`] |
//! | POST | `/sessions/{id}/extend` | [`ExtendRequest`] | [`ExtendReply`] |
//! | GET | `/sessions/{id}/log` | | JSON lines, record replaced by its digest |
//!
//! Each session is persisted as `<data dir>/<id>.jsonl`, one event per
//! line, appended after every change. Errors come back as
//! `{"error": "..."}` with a 4xx or 5xx status.

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use stv_audit::format::{parse_preference_file, FileFormat};
use stv_audit::session::{
    read_log, write_log, EntryStatus, Locator, Reading, Session, SessionConfig, StatsSnapshot,
    SubmitResponse, Task,
};

pub const PORT_VAR: &str = "STV_AUDIT_PORT";
pub const DATA_DIR_VAR: &str = "STV_AUDIT_DATA_DIR";
pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_DATA_DIR: &str = "stv-audit-data";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceConfig {
    pub port: u16,
    pub data_dir: PathBuf,
}

impl ServiceConfig {
    /// Defaults overridden by `STV_AUDIT_PORT` and `STV_AUDIT_DATA_DIR`.
    pub fn from_env() -> Result<Self, String> {
        let port = match std::env::var(PORT_VAR) {
            Ok(p) => p.parse().map_err(|_| format!("{PORT_VAR} is not a port: {p}"))?,
            Err(_) => DEFAULT_PORT,
        };
        let data_dir = std::env::var_os(DATA_DIR_VAR).map_or_else(|| DEFAULT_DATA_DIR.into(), PathBuf::from);
        Ok(ServiceConfig { port, data_dir })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn unprocessable(e: impl ToString) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
    }

    fn internal(e: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(r.status(), r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Stored {
    session: Session,
    path: Option<PathBuf>,
    /// Log entries already on disk.
    persisted: usize,
}

impl Stored {
    fn persist(&mut self) -> std::io::Result<()> {
        let Some(path) = &self.path else {
            self.persisted = self.session.log().len();
            return Ok(());
        };
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut buf = Vec::new();
        write_log(&self.session.log()[self.persisted..], &mut buf).map_err(std::io::Error::other)?;
        file.write_all(&buf)?;
        file.sync_data()?;
        self.persisted = self.session.log().len();
        Ok(())
    }

    /// Persists new events; on failure rolls the session back to the disk
    /// state so memory never runs ahead of the log.
    fn commit(&mut self) -> ApiResult<()> {
        if let Err(e) = self.persist() {
            let log = self.session.log()[..self.persisted].to_vec();
            self.session = Session::replay(&log).map_err(ApiError::internal)?;
            return Err(ApiError::internal(format!("could not write event log: {e}")));
        }
        Ok(())
    }
}

type Handle = Arc<Mutex<Stored>>;

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Handle>>>,
    data_dir: Option<PathBuf>,
}

impl AppState {
    /// Sessions held in memory only.
    pub fn in_memory() -> Self {
        AppState {
            sessions: Arc::default(),
            data_dir: None,
        }
    }

    /// Sessions persisted under `dir`; existing logs there are replayed.
    pub fn with_data_dir(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
                continue;
            };
            let log = read_log(BufReader::new(fs::File::open(&path)?)).map_err(std::io::Error::other)?;
            let session = Session::replay(&log)
                .map_err(|e| std::io::Error::other(format!("{}: {e}", path.display())))?;
            let persisted = session.log().len();
            sessions.insert(
                id,
                Arc::new(Mutex::new(Stored {
                    session,
                    path: Some(path),
                    persisted,
                })),
            );
        }
        Ok(AppState {
            sessions: Arc::new(RwLock::new(sessions)),
            data_dir: Some(dir),
        })
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Path of a session's event log, when persisted.
    pub fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| log_file(d, id))
    }

    fn get(&self, id: &str) -> ApiResult<Handle> {
        self.sessions
            .read()
            .expect("lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
    }
}

fn log_file(dir: &FsPath, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

/// Runs `f` on the session off the async executor.
async fn with_session<T: Send + 'static>(
    state: &AppState,
    id: &str,
    f: impl FnOnce(&mut Stored) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    let handle = state.get(id)?;
    tokio::task::spawn_blocking(move || {
        let mut stored = handle.lock().map_err(|_| ApiError::internal("session lock poisoned"))?;
        f(&mut stored)
    })
    .await
    .map_err(ApiError::internal)?
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFormat {
    #[default]
    CanonicalCsv,
    Aec2016Formal,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateRequest {
    /// Preference file contents.
    pub record: String,
    #[serde(default)]
    pub format: RecordFormat,
    /// Required unless the file states it.
    #[serde(default)]
    pub seats: Option<usize>,
    #[serde(default)]
    pub config: SessionConfig,
    pub seed: u64,
    pub initial_size: u64,
    #[serde(default)]
    pub locators: Vec<Locator>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateReply {
    pub id: String,
    pub population: u64,
    pub sample_size: u64,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub reading: Reading,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitReply {
    pub offset: u64,
    pub result: SubmitResponse,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtendRequest {
    pub new_size: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtendReply {
    pub sample_size: u64,
    pub offset: u64,
}

async fn create(
    State(state): State<AppState>,
    req: Result<Json<CreateRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<CreateReply>)> {
    let Json(req) = req?;
    let state2 = state.clone();
    let reply = tokio::task::spawn_blocking(move || -> ApiResult<CreateReply> {
        let format = match req.format {
            RecordFormat::CanonicalCsv => FileFormat::CanonicalCsv,
            RecordFormat::Aec2016Formal => FileFormat::Aec2016Formal,
        };
        let record = parse_preference_file(req.record.as_bytes(), format)
            .and_then(|p| p.into_record(req.seats))
            .map_err(ApiError::unprocessable)?;
        let session = Session::create(&record, req.config, req.seed, req.initial_size, req.locators)
            .map_err(ApiError::unprocessable)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let reply = CreateReply {
            id: id.clone(),
            population: record.profile.total(),
            sample_size: session.draw().size(),
            offset: session.offset(),
        };
        let mut stored = Stored {
            session,
            path: state2.data_dir.as_ref().map(|d| log_file(d, &id)),
            persisted: 0,
        };
        stored.persist().map_err(ApiError::internal)?;
        state2
            .sessions
            .write()
            .expect("lock")
            .insert(id, Arc::new(Mutex::new(stored)));
        Ok(reply)
    })
    .await
    .map_err(ApiError::internal)??;
    Ok((StatusCode::CREATED, Json(reply)))
}

async fn task(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Task>> {
    with_session(&state, &id, |s| Ok(s.session.next_task())).await.map(Json)
}

async fn submit(
    State(state): State<AppState>,
    Path((id, index)): Path<(String, u64)>,
    req: Result<Json<SubmitRequest>, JsonRejection>,
) -> ApiResult<Json<SubmitReply>> {
    let Json(req) = req?;
    with_session(&state, &id, move |s| {
        match s.session.entries().get(&index).map(|e| e.status) {
            None => {
                return Err(ApiError::new(
                    StatusCode::NOT_FOUND,
                    format!("ballot {index} is not in the sample"),
                ))
            }
            Some(EntryStatus::Entered | EntryStatus::Confirmed) => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    format!("ballot {index} is already settled"),
                ))
            }
            Some(_) => {}
        }
        let result = s.session.submit(index, req.reading).map_err(ApiError::unprocessable)?;
        s.commit()?;
        Ok(SubmitReply {
            offset: s.session.offset(),
            result,
        })
    })
    .await
    .map(Json)
}

async fn stats(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<StatsSnapshot>> {
    with_session(&state, &id, |s| s.session.stats().map_err(ApiError::internal))
        .await
        .map(Json)
}

async fn extend(
    State(state): State<AppState>,
    Path(id): Path<String>,
    req: Result<Json<ExtendRequest>, JsonRejection>,
) -> ApiResult<Json<ExtendReply>> {
    let Json(req) = req?;
    with_session(&state, &id, move |s| {
        let sample_size = s
            .session
            .extend(req.new_size)
            .map_err(ApiError::unprocessable)?
            .size();
        s.commit()?;
        Ok(ExtendReply {
            sample_size,
            offset: s.session.offset(),
        })
    })
    .await
    .map(Json)
}

async fn log(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let body = with_session(&state, &id, |s| {
        let mut buf = Vec::new();
        write_log(&s.session.public_log(), &mut buf).map_err(ApiError::internal)?;
        Ok(buf)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/task", get(task))
        .route("/sessions/{id}/entries/{index}", post(submit))
        .route("/sessions/{id}/stats", get(stats))
        .route("/sessions/{id}/extend", post(extend))
        .route("/sessions/{id}/log", get(log))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(config: &ServiceConfig) -> std::io::Result<()> {
    let state = AppState::with_data_dir(&config.data_dir)?;
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
