//! JSON-over-HTTP service used by the editor plug-in.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::evalharness::{Choice, Section, Shown, TrialRecord};
use crate::refstore::{Category, ReferenceObject};
use crate::{Error, Result};

pub const DEFAULT_REFERENCE_LIMIT: usize = 20;
pub const MAX_REFERENCE_LIMIT: usize = 200;

/// One selection event sent by the editor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEvent {
    pub participant_id: String,
    pub quote_id: String,
    pub section: Section,
    pub focal_value: Decimal,
    pub shown: Shown,
    pub choice: Choice,
    #[serde(default)]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub session_id: Option<String>,
}

impl SelectionEvent {
    pub fn trial(&self) -> TrialRecord {
        TrialRecord {
            participant_id: self.participant_id.clone(),
            quote_id: self.quote_id.clone(),
            section: self.section,
            focal_value: self.focal_value,
            shown: self.shown.clone(),
            choice: self.choice,
        }
    }
}

#[derive(Serialize)]
struct SelectionRow<'a> {
    participant_id: &'a str,
    quote_id: &'a str,
    section: Section,
    focal_value: String,
    shown: String,
    choice: String,
    timestamp: String,
    session_id: &'a str,
}

const SELECTION_HEADER: [&str; 8] = [
    "participant_id",
    "quote_id",
    "section",
    "focal_value",
    "shown",
    "choice",
    "timestamp",
    "session_id",
];

/// Append-only TSV log of selection events. The first columns match the
/// trial-log format read by the evaluation harness.
#[derive(Debug)]
pub struct SelectionLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl SelectionLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(SelectionLog {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, event: &SelectionEvent) -> Result<()> {
        event.trial().validate()?;
        let timestamp = match &event.timestamp {
            Some(t) => t.clone(),
            None => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs().to_string())
                .unwrap_or_default(),
        };
        let row = SelectionRow {
            participant_id: &event.participant_id,
            quote_id: &event.quote_id,
            section: event.section,
            focal_value: event.focal_value.normalize().to_string(),
            shown: event.shown.to_string(),
            choice: event.choice.to_string(),
            timestamp,
            session_id: event.session_id.as_deref().unwrap_or(""),
        };
        let mut line = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .has_headers(false)
            .from_writer(Vec::new());
        line.serialize(&row)?;
        let line = line.into_inner().map_err(|e| Error::Io(e.into_error()))?;

        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        if file.metadata()?.len() == 0 {
            let mut header = SELECTION_HEADER.join("\t");
            header.push('\n');
            file.write_all(header.as_bytes())?;
        }
        file.write_all(&line)?;
        file.flush()?;
        Ok(())
    }
}

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub log: Arc<SelectionLog>,
    pub max_body_bytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

fn body_bytes(body: std::result::Result<Bytes, BytesRejection>, limit: usize) -> std::result::Result<Bytes, String> {
    let body = body.map_err(|e| format!("could not read body: {e}"))?;
    if body.len() > limit {
        return Err(format!("body is {} bytes; the limit is {limit}", body.len()));
    }
    Ok(body)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PerspectivesRequest {
    pub text: String,
}

async fn perspectives(State(state): State<AppState>, body: std::result::Result<Bytes, BytesRejection>) -> Response {
    let body = match body_bytes(body, state.max_body_bytes) {
        Ok(b) => b,
        Err(message) => return error_response(StatusCode::BAD_REQUEST, message),
    };
    let req: PerspectivesRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("invalid request: {e}")),
    };
    let engine = state.engine.clone();
    let outcome = tokio::task::spawn_blocking(move || engine.perspectives(&req.text)).await;
    match outcome {
        Ok(Ok(resp)) => {
            let status = if resp.provider_unavailable() {
                StatusCode::SERVICE_UNAVAILABLE
            } else {
                StatusCode::OK
            };
            (status, Json(resp)).into_response()
        }
        Ok(Err(e @ (Error::EmptyText | Error::InvalidArgument(_)))) => {
            error_response(StatusCode::BAD_REQUEST, e.to_string())
        }
        Ok(Err(e)) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")),
    }
}

async fn selections(State(state): State<AppState>, body: std::result::Result<Bytes, BytesRejection>) -> Response {
    let body = match body_bytes(body, state.max_body_bytes) {
        Ok(b) => b,
        Err(message) => return error_response(StatusCode::BAD_REQUEST, message),
    };
    let event: SelectionEvent = match serde_json::from_slice(&body) {
        Ok(e) => e,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("invalid selection: {e}")),
    };
    let log = state.log.clone();
    match tokio::task::spawn_blocking(move || log.append(&event)).await {
        Ok(Ok(())) => StatusCode::NO_CONTENT.into_response(),
        Ok(Err(e @ (Error::NonPositive(_) | Error::InvalidArgument(_)))) => {
            error_response(StatusCode::BAD_REQUEST, e.to_string())
        }
        Ok(Err(e)) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthBody {
    pub status: String,
    pub policies: Vec<crate::policies::PolicyKind>,
    pub references: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_provider: Option<String>,
}

async fn health(State(state): State<AppState>) -> Json<HealthBody> {
    let engine = &state.engine;
    Json(HealthBody {
        status: "ok".into(),
        policies: engine.engines.enabled.clone(),
        references: engine.references.as_ref().map_or(0, |c| c.len()),
        embedding_provider: engine.engines.contextual.as_ref().map(|c| c.provider.name().to_string()),
    })
}

#[derive(Debug, Deserialize)]
struct ReferenceQuery {
    q: Option<String>,
    category: Option<String>,
    limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReferencesBody {
    pub total: usize,
    pub references: Vec<ReferenceObject>,
}

async fn references(
    State(state): State<AppState>,
    query: std::result::Result<Query<ReferenceQuery>, QueryRejection>,
) -> Response {
    let query = match query {
        Ok(Query(q)) => q,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("invalid query string: {e}")),
    };
    let category = match query.category.as_deref() {
        None | Some("") => None,
        Some(name) => match Category::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(name)) {
            Some(c) => Some(c),
            None => return error_response(StatusCode::BAD_REQUEST, format!("unknown category `{name}`")),
        },
    };
    let limit = query.limit.unwrap_or(DEFAULT_REFERENCE_LIMIT).min(MAX_REFERENCE_LIMIT);
    let needle = query.q.unwrap_or_default().to_lowercase();
    let Some(corpus) = state.engine.references.as_ref() else {
        return Json(ReferencesBody { total: 0, references: Vec::new() }).into_response();
    };
    let matches: Vec<&ReferenceObject> = corpus
        .objects()
        .iter()
        .filter(|o| category.is_none_or(|c| o.category == c))
        .filter(|o| needle.is_empty() || o.phrase.to_lowercase().contains(&needle))
        .collect();
    Json(ReferencesBody {
        total: matches.len(),
        references: matches.into_iter().take(limit).cloned().collect(),
    })
    .into_response()
}

pub fn router(state: AppState) -> Router {
    let limit = state.max_body_bytes;
    Router::new()
        .route("/v1/perspectives", post(perspectives))
        .route("/v1/selections", post(selections))
        .route("/v1/health", get(health))
        .route("/v1/references", get(references))
        .layer(DefaultBodyLimit::max(limit + 1))
        .with_state(state)
}

/// Serves `state` on `listener` until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
