//! JSON HTTP API. Heavy work (delineation, retrieval, LLM calls) runs on the
//! blocking pool; every error uses the `{"error": {"code", "message"}}` envelope.

use std::sync::Arc;

use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Path, Query, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use ecgrag_core::knowledge::{Collection, CollectionFilter, KnowledgeError};
use ecgrag_core::llm::{DiagnosisResponse, LlmError};
use ecgrag_core::pipeline::Diagnosis;
use ecgrag_core::prompt::{AblationConfig, Exchange, Preset, Prompt, PromptError, Provenance, DEFAULT_RETRIEVAL_K};
use ecgrag_core::ptbxl::{load_record, parse_header, CanonicalRecord, MetadataRow, Sex};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::Engine;
use crate::error::AppError;
use crate::session::{SessionRecord, SessionStore, SharedSession};

pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub sessions: Arc<SessionStore>,
}

impl AppState {
    pub fn new(engine: Engine) -> Self {
        let sessions = SessionStore::new(engine.config.server.session_dir.clone());
        Self {
            engine: Arc::new(engine),
            sessions: Arc::new(sessions),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id:?}"))
    }

    fn unavailable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        let message = e.to_string();
        match e {
            AppError::Ingest(_) | AppError::Delineation(_) => Self::bad_request("invalid_record", message),
            AppError::StoreUnavailable(_)
            | AppError::Config(_)
            | AppError::Prompt(PromptError::StoreUnavailable)
            | AppError::Prompt(PromptError::Retrieval(KnowledgeError::ProviderUnavailable(_)))
            | AppError::Knowledge(KnowledgeError::ProviderUnavailable(_))
            | AppError::Llm(LlmError::BackendTimeout { .. } | LlmError::BackendRefused(_) | LlmError::StubMiss(_)) => {
                Self::unavailable(message)
            }
            AppError::Prompt(PromptError::UnknownPreset(_) | PromptError::EmptyQuestion | PromptError::InvalidConfig(_))
            | AppError::Knowledge(KnowledgeError::InvalidQuery(_)) => Self::bad_request("bad_request", message),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

/// JSON body extractor whose rejection uses the error envelope.
pub struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Self(v))
            .map_err(|rej| ApiError::bad_request("invalid_body", rej.body_text()))
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn session(state: &AppState, id: &str) -> Result<SharedSession, ApiError> {
    state.sessions.get(id).ok_or_else(|| ApiError::unknown_session(id))
}

fn read<T>(state: &AppState, id: &str, f: impl FnOnce(&SessionRecord) -> T) -> Result<T, ApiError> {
    let s = session(state, id)?;
    let guard = s.lock().expect("session poisoned");
    Ok(f(&guard))
}

fn parse_preset(name: Option<&str>, fallback: Preset) -> Result<Preset, ApiError> {
    name.map_or(Ok(fallback), |n| n.parse().map_err(|e: PromptError| ApiError::bad_request("bad_request", e.to_string())))
}

/// A WFDB header/signal pair; the signal file is base64-encoded.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WfdbUpload {
    pub header: String,
    pub data_base64: String,
    #[serde(default)]
    pub ecg_id: u32,
    #[serde(default)]
    pub age: Option<f64>,
    #[serde(default)]
    pub sex: Sex,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum Upload {
    Wfdb(WfdbUpload),
    Canonical(CanonicalRecord),
}

#[derive(Debug, Serialize)]
struct UploadResponse {
    session_id: String,
    record: CanonicalRecord,
}

async fn upload(State(state): State<AppState>, JsonBody(body): JsonBody<Upload>) -> Result<Json<UploadResponse>, ApiError> {
    blocking(move || {
        let record = match body {
            Upload::Canonical(c) => c.into_record().map_err(AppError::from)?,
            Upload::Wfdb(w) => {
                let header = parse_header(&w.header).map_err(AppError::from)?;
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(w.data_base64.trim())
                    .map_err(|e| ApiError::bad_request("invalid_record", format!("data_base64: {e}")))?;
                let meta = MetadataRow {
                    ecg_id: w.ecg_id,
                    age: w.age,
                    sex: w.sex,
                    ..MetadataRow::default()
                };
                load_record(&bytes, &header, &meta).map_err(AppError::from)?
            }
        };
        let analysis = state.engine.analyze(&record)?;
        let described = CanonicalRecord::describe(&record, None);
        let session_id = state
            .sessions
            .insert(SessionRecord::new(record, analysis, state.engine.config.default_preset));
        Ok(Json(UploadResponse {
            session_id,
            record: described,
        }))
    })
    .await
}

async fn signal(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<CanonicalRecord>, ApiError> {
    read(&state, &id, |s| Json(CanonicalRecord::describe(&s.record, None).with_signal(&s.record)))
}

async fn fiducials(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    read(&state, &id, |s| Json(serde_json::to_value(&s.analysis.fiducials).expect("fiducials serialize")))
}

async fn features(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    read(&state, &id, |s| Json(serde_json::to_value(&s.analysis.features).expect("features serialize")))
}

async fn rules(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    read(&state, &id, |s| Json(serde_json::to_value(&s.analysis.report).expect("report serializes")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseRequest {
    #[serde(default)]
    pub preset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSummary {
    pub hash: String,
    pub config: String,
    pub template_version: String,
    pub provenance: Vec<Provenance>,
    pub text: String,
}

impl From<&Prompt> for PromptSummary {
    fn from(p: &Prompt) -> Self {
        Self {
            hash: p.hash(),
            config: p.config.clone(),
            template_version: p.template_version.clone(),
            provenance: p.provenance.clone(),
            text: p.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseResponse {
    pub session_id: String,
    pub preset: Preset,
    pub response: DiagnosisResponse,
    pub prompt: PromptSummary,
}

fn diagnose_response(id: &str, preset: Preset, d: &Diagnosis) -> DiagnoseResponse {
    DiagnoseResponse {
        session_id: id.to_string(),
        preset,
        response: d.response.clone(),
        prompt: PromptSummary::from(&d.prompt),
    }
}

/// Repeated calls for the same preset return the cached diagnosis.
async fn diagnose(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<DiagnoseRequest>,
) -> Result<Json<DiagnoseResponse>, ApiError> {
    let shared = session(&state, &id)?;
    blocking(move || {
        let mut s = shared.lock().expect("session poisoned");
        let preset = parse_preset(body.preset.as_deref(), s.preset)?;
        s.select_preset(preset);
        if let Some(d) = &s.diagnosis {
            return Ok(Json(diagnose_response(&id, preset, d)));
        }
        let d = state.engine.diagnose(&s.analysis, preset)?;
        if d.response.raw_text.is_empty() {
            if let Some(reason) = &d.response.parse_error {
                return Err(ApiError::unavailable(reason.clone()));
            }
        }
        let out = diagnose_response(&id, preset, &d);
        s.diagnosis = Some(d);
        state.sessions.save(&s);
        Ok(Json(out))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AskRequest {
    pub question: String,
    #[serde(default)]
    pub preset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub session_id: String,
    pub preset: Preset,
    pub question: String,
    pub answer: String,
    pub backend: String,
    pub prompt: PromptSummary,
}

async fn ask(
    State(state): State<AppState>,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<AskRequest>,
) -> Result<Json<AskResponse>, ApiError> {
    let shared = session(&state, &id)?;
    blocking(move || {
        let mut s = shared.lock().expect("session poisoned");
        let preset = parse_preset(body.preset.as_deref(), s.preset)?;
        s.select_preset(preset);
        let answer = state.engine.ask(&s.analysis, preset, &body.question, &s.exchanges)?;
        s.exchanges.push(Exchange {
            question: body.question.clone(),
            answer: answer.text.clone(),
        });
        state.sessions.save(&s);
        Ok(Json(AskResponse {
            session_id: id,
            preset,
            question: body.question,
            answer: answer.text,
            backend: answer.backend,
            prompt: PromptSummary::from(&answer.prompt),
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct SearchParams {
    pub q: String,
    #[serde(default)]
    pub collection: CollectionFilter,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub source_id: String,
    pub title: Option<String>,
    pub collection: Collection,
    pub similarity: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub query: String,
    pub collection: CollectionFilter,
    pub k: usize,
    pub empty_index: bool,
    pub hits: Vec<SearchHit>,
}

async fn search(
    State(state): State<AppState>,
    params: Result<Query<SearchParams>, QueryRejection>,
) -> Result<Json<SearchResponse>, ApiError> {
    let Query(p) = params.map_err(|rej| ApiError::bad_request("bad_request", rej.body_text()))?;
    blocking(move || {
        let k = p.k.unwrap_or(DEFAULT_RETRIEVAL_K);
        let results = state.engine.search(&p.q, p.collection, k)?;
        let store = state.engine.store()?;
        let hits = results
            .hits
            .into_iter()
            .map(|h| SearchHit {
                title: store.title(&h.chunk.source_id).map(str::to_string),
                chunk_id: h.chunk.id,
                source_id: h.chunk.source_id,
                collection: h.chunk.collection,
                similarity: h.similarity,
                text: h.chunk.text,
            })
            .collect();
        Ok(Json(SearchResponse {
            query: p.q,
            collection: p.collection,
            k,
            empty_index: results.empty_index,
            hits,
        }))
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetsResponse {
    pub default: Preset,
    pub presets: Vec<AblationConfig>,
}

async fn presets(State(state): State<AppState>) -> Json<PresetsResponse> {
    Json(PresetsResponse {
        default: state.engine.config.default_preset,
        presets: Preset::ALL.iter().map(|p| state.engine.preset_config(*p)).collect(),
    })
}

/// Component status only; the LLM backend is never contacted.
async fn healthz(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let engine = &state.engine;
        let store = match engine.store() {
            Ok(s) => json!({
                "status": "ok",
                "embedder": s.embedder_id(),
                "chunks": {
                    "documents": s.collection_len(Collection::Documents),
                    "knowledge": s.collection_len(Collection::Knowledge),
                },
            }),
            Err(e) => json!({ "status": "unavailable", "message": e.to_string() }),
        };
        let ok = store["status"] == "ok";
        Ok(Json(json!({
            "status": if ok { "ok" } else { "degraded" },
            "components": {
                "rules": { "status": "ok", "count": engine.table.rules().len() },
                "store": store,
                "backend": match engine.backend() {
                    Ok(b) => json!({ "status": "configured", "id": b.id() }),
                    Err(e) => json!({ "status": "unavailable", "message": e.to_string() }),
                },
            },
        })))
    })
    .await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed for this endpoint")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/ecg", post(upload))
        .route("/ecg/{id}/signal", get(signal))
        .route("/ecg/{id}/fiducials", get(fiducials))
        .route("/ecg/{id}/features", get(features))
        .route("/ecg/{id}/rules", get(rules))
        .route("/ecg/{id}/diagnose", post(diagnose))
        .route("/ecg/{id}/ask", post(ask))
        .route("/search", get(search))
        .route("/presets", get(presets))
        .route("/healthz", get(healthz))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}
