//! HTTP interface.
//!
//! | Method | Path | Body | Reply |
//! |---|---|---|---|
//! | POST | `/session` | `{rater_id}` | session view with the first trial |
//! | GET | `/session/{id}/trial` | | session view with the open trial or completion |
//! | POST | `/session/{id}/choice` | `{index, winner}` | acknowledgment with next trial or completion |
//! | POST | `/session/{id}/questionnaire` | `{answers}` | acknowledgment |
//! | GET | `/export?include_excluded=bool` | | comparison records, one JSON object per line |
//! | GET | `/export/questionnaires` | | questionnaire answers, one JSON object per line |
//! | GET | `/images/{id}` | | image bytes |
//! | GET | `/status` | | counters |
//!
//! Errors carry `{"error": message}` with 400 for invalid input, 404 for
//! unknown sessions or images, and 409 for requests that conflict with the
//! session's state.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::engine::Handle;
use crate::state::{ChoiceAck, Command, Outcome, QuestionnaireAck, SessionView};
use crate::{ExpError, ExperimentConfig};

#[derive(Clone)]
pub struct AppState {
    pub handle: Handle,
    pub config: Arc<ExperimentConfig>,
}

impl IntoResponse for ExpError {
    fn into_response(self) -> Response {
        let status = match &self {
            ExpError::Invalid(_) => StatusCode::BAD_REQUEST,
            ExpError::NotFound(_) => StatusCode::NOT_FOUND,
            ExpError::Conflict(_) => StatusCode::CONFLICT,
            ExpError::Config(_) | ExpError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Deserialize)]
pub struct StartRequest {
    pub rater_id: String,
}

#[derive(Deserialize)]
pub struct ChoiceRequest {
    pub index: usize,
    pub winner: String,
}

#[derive(Deserialize)]
pub struct QuestionnaireRequest {
    #[serde(default)]
    pub answers: BTreeMap<String, String>,
}

#[derive(Deserialize)]
pub struct ExportQuery {
    #[serde(default)]
    pub include_excluded: bool,
}

#[derive(Serialize)]
struct Status {
    seq: u64,
    pairs: usize,
    pending_pairs: usize,
    filled_slots: usize,
    records: usize,
    target_total_comparisons: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(start_session))
        .route("/session/{id}/trial", get(current_trial))
        .route("/session/{id}/choice", post(record_choice))
        .route("/session/{id}/questionnaire", post(questionnaire))
        .route("/export", get(export))
        .route("/export/questionnaires", get(export_questionnaires))
        .route("/images/{id}", get(image))
        .route("/status", get(status))
        .with_state(state)
}

async fn start_session(State(app): State<AppState>, Json(req): Json<StartRequest>) -> Result<Json<SessionView>, ExpError> {
    match app.handle.execute(Command::StartSession { rater_id: req.rater_id }).await? {
        Outcome::Started(view) => Ok(Json(view)),
        other => unreachable!("start produced {other:?}"),
    }
}

async fn current_trial(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ExpError> {
    Ok(Json(app.handle.session(id).await?))
}

async fn record_choice(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ChoiceRequest>,
) -> Result<Json<ChoiceAck>, ExpError> {
    let cmd = Command::Choice {
        session_id: id,
        index: req.index,
        winner: req.winner,
    };
    match app.handle.execute(cmd).await? {
        Outcome::Chose(ack) => Ok(Json(ack)),
        other => unreachable!("choice produced {other:?}"),
    }
}

async fn questionnaire(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<QuestionnaireRequest>,
) -> Result<Json<QuestionnaireAck>, ExpError> {
    let cmd = Command::Questionnaire {
        session_id: id,
        answers: req.answers,
    };
    match app.handle.execute(cmd).await? {
        Outcome::Answered(ack) => Ok(Json(ack)),
        other => unreachable!("questionnaire produced {other:?}"),
    }
}

fn json_lines<T: Serialize>(items: &[T]) -> Response {
    let mut body = String::new();
    for item in items {
        body.push_str(&serde_json::to_string(item).expect("record serializes"));
        body.push('\n');
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn export(State(app): State<AppState>, Query(q): Query<ExportQuery>) -> Result<Response, ExpError> {
    Ok(json_lines(&app.handle.export(q.include_excluded).await?))
}

async fn export_questionnaires(State(app): State<AppState>) -> Result<Response, ExpError> {
    Ok(json_lines(&app.handle.questionnaires().await?))
}

fn image_path(config: &ExperimentConfig, id: &str) -> Option<PathBuf> {
    if !config.corpus.iter().any(|c| c == id) {
        return None;
    }
    let dir = config.image_dir.as_ref()?;
    let direct = dir.join(id);
    if direct.is_file() {
        return Some(direct);
    }
    ["png", "jpg", "jpeg"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

async fn image(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ExpError> {
    let path = image_path(&app.config, &id).ok_or_else(|| ExpError::NotFound(format!("no image {id}")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ExpError::Storage(format!("{}: {e}", path.display())))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn status(State(app): State<AppState>) -> Result<Json<serde_json::Value>, ExpError> {
    let s = app
        .handle
        .ask(|e| {
            let st = e.state();
            Status {
                seq: e.seq(),
                pairs: st.pair_count(),
                pending_pairs: st.pending_len(),
                filled_slots: st.filled_slots(),
                records: st.export(true).len(),
                target_total_comparisons: st.config().target_total_comparisons,
            }
        })
        .await?;
    Ok(Json(serde_json::to_value(s).expect("status serializes")))
}
