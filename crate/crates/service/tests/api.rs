use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use ecgrag::api::{AskResponse, DiagnoseResponse, PresetsResponse, SearchResponse};
use ecgrag::config::AppConfig;
use ecgrag::{router, AppState, Engine};
use ecgrag_core::features::{GLOBAL_FEATURES, LEAD_FEATURES};
use ecgrag_core::llm::{BackendConfig, BackendKind, ChatBackend, LlmError};
use ecgrag_core::ptbxl::{CanonicalRecord, Sex, LEAD_NAMES};
use ecgrag_core::rules::{project_superclasses, RuleReport};
use ecgrag_core::synth::{generate_record, scenario, Morphology};
use ecgrag_core::Superclass;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config() -> AppConfig {
    AppConfig {
        manifest: Some(repo().join("corpus/manifest.toml")),
        ..AppConfig::default()
    }
}

fn app_with(engine: Engine) -> Router {
    router(AppState::new(engine))
}

fn app() -> Router {
    app_with(Engine::new(config()).unwrap())
}

fn canonical(morphology: Morphology, ecg_id: u32) -> Value {
    let spec = scenario(morphology, 75.0, 500, 1000 + u64::from(ecg_id));
    let (record, _) = generate_record(ecg_id, &spec, Some(66.0), Sex::Female);
    serde_json::to_value(CanonicalRecord::describe(&record, None).with_signal(&record)).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{uri}: body is not JSON ({e}): {bytes:?}"))
    };
    (status, value)
}

async fn upload(app: &Router, body: Value) -> String {
    let (status, v) = call(app, "POST", "/ecg", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

fn assert_envelope(v: &Value, code: &str) {
    assert_eq!(v["error"]["code"], code, "{v}");
    assert!(v["error"]["message"].as_str().is_some_and(|m| !m.is_empty()), "{v}");
    assert_eq!(v.as_object().unwrap().len(), 1);
}

#[tokio::test]
async fn upload_then_features_lists_the_registry() {
    let app = app();
    let id = upload(&app, canonical(Morphology::Normal, 1)).await;
    let (status, v) = call(&app, "GET", &format!("/ecg/{id}/features"), None).await;
    assert_eq!(status, StatusCode::OK);
    let global: BTreeSet<&str> = v["global"].as_object().unwrap().keys().map(String::as_str).collect();
    let expected: BTreeSet<&str> = GLOBAL_FEATURES.iter().map(|d| d.name).collect();
    assert_eq!(global, expected);
    let leads = v["leads"].as_object().unwrap();
    assert_eq!(leads.len(), 12);
    let expected: BTreeSet<&str> = LEAD_FEATURES.iter().map(|d| d.name).collect();
    for (lead, table) in leads {
        let keys: BTreeSet<&str> = table.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, expected, "lead {lead}");
    }
    assert_eq!(global.len() + expected.len(), 42);
}

#[tokio::test]
async fn wfdb_pair_upload_decodes_the_bundled_record() {
    let stem = repo().join("data/ptbxl-mini/records500/00000/00003_hr");
    let header = std::fs::read_to_string(stem.with_extension("hea")).unwrap();
    let data = std::fs::read(stem.with_extension("dat")).unwrap();
    let body = json!({
        "header": header,
        "data_base64": base64::engine::general_purpose::STANDARD.encode(data),
        "ecg_id": 3,
        "age": 66.0,
        "sex": "female",
    });
    let app = app();
    let id = upload(&app, body).await;
    let (status, v) = call(&app, "GET", &format!("/ecg/{id}/signal"), None).await;
    assert_eq!(status, StatusCode::OK);
    let record: CanonicalRecord = serde_json::from_value(v).unwrap();
    assert_eq!(record.sampling_rate_hz, 500);
    assert_eq!(record.lead_names, LEAD_NAMES.map(String::from).to_vec());
    assert_eq!(record.signal.as_ref().unwrap().len(), 12);
    assert!((record.duration_s - 10.0).abs() < 1e-9);
    let (status, f) = call(&app, "GET", &format!("/ecg/{id}/fiducials"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(f.is_object());
}

#[tokio::test]
async fn rule_echo_diagnosis_of_cd_fixture_is_cd() {
    let app = app();
    let id = upload(&app, canonical(Morphology::Ivcd113, 3)).await;
    let (_, rules) = call(&app, "GET", &format!("/ecg/{id}/rules"), None).await;
    let report: RuleReport = serde_json::from_value(rules).unwrap();
    let projected = project_superclasses(&report);
    assert!(projected.get(Superclass::Cd));

    let (status, v) = call(&app, "POST", &format!("/ecg/{id}/diagnose"), Some(json!({"preset": "Proposed"}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["response"]["verdicts"]["CD"]["result"], true);
    let typed: DiagnoseResponse = serde_json::from_value(v.clone()).unwrap();
    assert_eq!(serde_json::to_value(&typed).unwrap(), v);
    assert_eq!(typed.response.predictions(), projected);
    assert_eq!(typed.prompt.config, "Proposed");
    assert!(typed.prompt.provenance.iter().any(|p| p.section == 3));
    assert!(typed.prompt.provenance.iter().any(|p| p.section == 4));
}

#[tokio::test]
async fn preset_change_replaces_the_cached_diagnosis() {
    let app = app();
    let id = upload(&app, canonical(Morphology::Ivcd113, 3)).await;
    let uri = format!("/ecg/{id}/diagnose");
    let (_, base) = call(&app, "POST", &uri, Some(json!({"preset": "Base"}))).await;
    assert_eq!(base["preset"], "Base");
    assert_eq!(base["response"]["verdicts"]["CD"]["result"], false);
    let (_, proposed) = call(&app, "POST", &uri, Some(json!({"preset": "proposed"}))).await;
    assert_eq!(proposed["preset"], "Proposed");
    assert_eq!(proposed["response"]["verdicts"]["CD"]["result"], true);
    assert_ne!(base["prompt"]["hash"], proposed["prompt"]["hash"]);
    let (_, default) = call(&app, "POST", &uri, Some(json!({}))).await;
    assert_eq!(default["preset"], "Proposed");
}

fn without_latency(mut v: Value) -> Value {
    v["response"].as_object_mut().unwrap().remove("latency_ms");
    v
}

#[tokio::test]
async fn diagnose_is_idempotent_under_replay() {
    let dir = tempfile::tempdir().unwrap();
    let transcripts = dir.path().join("t.jsonl");
    let mut cfg = config();
    cfg.backend.transcript_path = Some(transcripts.clone());
    let recorder = app_with(Engine::new(cfg).unwrap());
    let record = canonical(Morphology::Lvh, 4);
    let id = upload(&recorder, record.clone()).await;
    let (_, recorded) = call(&recorder, "POST", &format!("/ecg/{id}/diagnose"), Some(json!({"preset": "Ablation3"}))).await;

    let mut replay_cfg = config();
    replay_cfg.backend = BackendConfig {
        kind: BackendKind::FixedScriptStub,
        transcript_path: Some(transcripts),
        ..BackendConfig::default()
    };
    let mut answers = Vec::new();
    for _ in 0..2 {
        let app = app_with(Engine::new(replay_cfg.clone()).unwrap());
        let id = upload(&app, record.clone()).await;
        let (status, v) = call(&app, "POST", &format!("/ecg/{id}/diagnose"), Some(json!({"preset": "Ablation3"}))).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let mut v = without_latency(v);
        v.as_object_mut().unwrap().remove("session_id");
        answers.push(v);
    }
    assert_eq!(answers[0], answers[1]);
    assert_eq!(answers[0]["response"]["verdicts"], recorded["response"]["verdicts"]);
    assert_eq!(answers[0]["response"]["backend"], "replay");
}

#[tokio::test]
async fn unknown_session_is_a_404_envelope() {
    let app = app();
    for (method, uri, body) in [
        ("GET", "/ecg/unknown/features", None),
        ("GET", "/ecg/unknown/signal", None),
        ("GET", "/ecg/unknown/rules", None),
        ("POST", "/ecg/unknown/diagnose", Some(json!({}))),
        ("POST", "/ecg/unknown/ask", Some(json!({"question": "Why?"}))),
    ] {
        let (status, v) = call(&app, method, uri, body).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_envelope(&v, "session_not_found");
    }
    let (status, v) = call(&app, "GET", "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_envelope(&v, "not_found");
}

#[tokio::test]
async fn malformed_uploads_are_400() {
    let app = app();
    let mut short = canonical(Morphology::Normal, 1);
    short["signal"].as_array_mut().unwrap().pop();
    let bad_b64 = json!({"header": "x 12 500 5000", "data_base64": "!!!"});
    for body in [json!({"nonsense": true}), short, bad_b64, json!([1, 2])] {
        let (status, v) = call(&app, "POST", "/ecg", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{v}");
        assert!(v["error"]["code"].is_string());
    }
    let req = Request::builder()
        .method("POST")
        .uri("/ecg")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_preset_and_empty_question_are_400() {
    let app = app();
    let id = upload(&app, canonical(Morphology::Normal, 1)).await;
    let (status, v) = call(&app, "POST", &format!("/ecg/{id}/diagnose"), Some(json!({"preset": "Ablation9"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_envelope(&v, "bad_request");
    let (status, v) = call(&app, "POST", &format!("/ecg/{id}/ask"), Some(json!({"question": "   "}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_envelope(&v, "bad_request");
}

#[tokio::test]
async fn ask_appends_a_question_part_and_retrieves_for_it() {
    let app = app();
    let id = upload(&app, canonical(Morphology::Ivcd113, 3)).await;
    let uri = format!("/ecg/{id}/ask");
    let q1 = "What does a QRS duration of 113 ms suggest?";
    let (status, v) = call(&app, "POST", &uri, Some(json!({"question": q1}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let first: AskResponse = serde_json::from_value(v).unwrap();
    assert!(!first.answer.is_empty());
    let text = &first.prompt.text;
    assert!(text.contains("### 2. Rule Results"));
    let q_at = text.find("### 6. Question").expect("sixth part present");
    assert!(text.find("### 5.").unwrap() < q_at);
    assert!(text[q_at..].contains(q1));
    let extra = first.prompt.provenance.iter().find(|p| p.section == 6).unwrap();
    assert_eq!(extra.query, q1);
    assert!(!extra.chunk_ids.is_empty());

    let (_, v) = call(&app, "POST", &uri, Some(json!({"question": "And the T waves?"}))).await;
    let second: AskResponse = serde_json::from_value(v).unwrap();
    assert!(second.prompt.text.contains(&format!("Q: {q1}")));
}

#[tokio::test]
async fn search_presets_and_health() {
    let app = app();
    let (status, v) = call(&app, "GET", "/search?q=bundle%20branch%20block&collection=knowledge&k=2", None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let s: SearchResponse = serde_json::from_value(v).unwrap();
    assert_eq!(s.hits.len(), 2);
    assert!(s.hits.iter().all(|h| h.collection == ecgrag_core::knowledge::Collection::Knowledge));
    assert!(s.hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    assert!(s.hits.iter().all(|h| h.title.is_some()));

    let (status, v) = call(&app, "GET", "/search?collection=knowledge", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_envelope(&v, "bad_request");
    let (status, _) = call(&app, "GET", "/search?q=x&k=0", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, v) = call(&app, "GET", "/presets", None).await;
    let p: PresetsResponse = serde_json::from_value(v).unwrap();
    let names: Vec<&str> = p.presets.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["Base", "Ablation1", "Ablation2", "Ablation3", "Proposed"]);

    let (status, v) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["components"]["rules"]["count"], 40);
    assert_eq!(v["components"]["store"]["chunks"]["knowledge"], 11);
}

struct Counting(AtomicUsize, Option<LlmError>);

impl ChatBackend for Counting {
    fn id(&self) -> String {
        "counting".into()
    }

    fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        match &self.1 {
            Some(e) => Err(e.clone()),
            None => Ok("{}".into()),
        }
    }
}

#[tokio::test]
async fn health_never_calls_the_backend_and_reports_a_missing_store() {
    let backend = Arc::new(Counting(AtomicUsize::new(0), None));
    let app = app_with(Engine::with_backend(AppConfig::default(), backend.clone()).unwrap());
    let (status, v) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "degraded");
    assert_eq!(v["components"]["store"]["status"], "unavailable");
    assert_eq!(v["components"]["backend"]["id"], "counting");
    assert_eq!(backend.0.load(Ordering::SeqCst), 0);

    let id = upload(&app, canonical(Morphology::Normal, 1)).await;
    let (status, v) = call(&app, "POST", &format!("/ecg/{id}/diagnose"), Some(json!({"preset": "Base"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_envelope(&v, "unavailable");
    let (status, _) = call(&app, "GET", "/search?q=x", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn backend_failure_is_a_503() {
    let err = LlmError::BackendTimeout {
        attempts: 3,
        message: "connection refused".into(),
    };
    let backend = Arc::new(Counting(AtomicUsize::new(0), Some(err)));
    let app = app_with(Engine::with_backend(config(), backend.clone()).unwrap());
    let id = upload(&app, canonical(Morphology::Normal, 1)).await;
    let (status, v) = call(&app, "POST", &format!("/ecg/{id}/diagnose"), Some(json!({}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_envelope(&v, "unavailable");
    let (status, _) = call(&app, "POST", &format!("/ecg/{id}/ask"), Some(json!({"question": "Why?"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(backend.0.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn sessions_survive_a_restart_with_a_session_dir() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.server.session_dir = Some(dir.path().to_path_buf());
    let first = app_with(Engine::new(cfg.clone()).unwrap());
    let id = upload(&first, canonical(Morphology::Rbbb, 2)).await;
    let (_, before) = call(&first, "GET", &format!("/ecg/{id}/rules"), None).await;
    drop(first);

    let second = app_with(Engine::new(cfg).unwrap());
    let (status, after) = call(&second, "GET", &format!("/ecg/{id}/rules"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
    let (status, _) = call(&second, "GET", "/ecg/..%2F..%2Fetc/rules", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
