//! Chat-completion backends and the per-superclass verdict contract.

mod gate;
mod remote;
mod stubs;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::rules::RuleTable;
use crate::{Superclass, SuperclassFlags};

pub use gate::{ConcurrencyGate, GatedBackend};
pub use remote::RemoteChatBackend;
pub use stubs::{read_transcripts, FixedScriptStub, RecordingBackend, RuleEchoStub, TranscriptEntry, TranscriptWriter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("backend timed out after {attempts} attempt(s): {message}")]
    BackendTimeout { attempts: u32, message: String },
    #[error("backend refused the request: {0}")]
    BackendRefused(String),
    #[error("no recorded response for prompt {0}")]
    StubMiss(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("transcript error: {0}")]
    Transcript(String),
}

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[error("unparseable response ({reason})")]
pub struct ParseFailure {
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub result: bool,
    pub explanation: String,
}

/// One verdict per superclass; construction guarantees all five are present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdicts(BTreeMap<Superclass, Verdict>);

impl Verdicts {
    pub fn from_fn(mut f: impl FnMut(Superclass) -> Verdict) -> Self {
        Self(Superclass::ALL.iter().map(|c| (*c, f(*c))).collect())
    }

    pub fn get(&self, class: Superclass) -> &Verdict {
        &self.0[&class]
    }

    pub fn flags(&self) -> SuperclassFlags {
        SuperclassFlags::from_fn(|c| self.get(c).result)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Superclass, &Verdict)> {
        self.0.iter().map(|(c, v)| (*c, v))
    }
}

impl<'de> Deserialize<'de> for Verdicts {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<Superclass, Verdict>::deserialize(d)?;
        match Superclass::ALL.iter().find(|c| !map.contains_key(c)) {
            Some(c) => Err(serde::de::Error::custom(format!("missing superclass {c}"))),
            None => Ok(Self(map)),
        }
    }
}

/// Outcome of one diagnosis call. `verdicts` is absent when the raw text did not
/// parse; scoring then treats every superclass as false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisResponse {
    pub verdicts: Option<Verdicts>,
    pub parse_error: Option<String>,
    pub raw_text: String,
    pub backend: String,
    pub latency_ms: u64,
}

impl DiagnosisResponse {
    pub fn predictions(&self) -> SuperclassFlags {
        self.verdicts.as_ref().map_or(SuperclassFlags::NONE, Verdicts::flags)
    }

    pub fn is_parse_failure(&self) -> bool {
        self.verdicts.is_none()
    }
}

/// Candidate JSON objects in `raw`, outermost first.
fn json_objects(raw: &str) -> impl Iterator<Item = Map<String, Value>> + '_ {
    raw.char_indices().filter(|(_, c)| *c == '{').filter_map(move |(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(m))) => Some(m),
            _ => None,
        }
    })
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Option<&'a Value> {
    obj.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v)
}

fn verdicts_from(obj: &Map<String, Value>) -> Result<Verdicts, String> {
    let mut out = BTreeMap::new();
    for class in Superclass::ALL {
        let entry = obj
            .get(class.code())
            .and_then(Value::as_object)
            .ok_or_else(|| format!("missing object for {class}"))?;
        let result = field(entry, "Result")
            .ok_or_else(|| format!("{class}: missing Result"))?
            .as_bool()
            .ok_or_else(|| format!("{class}: Result is not a boolean"))?;
        let explanation = field(entry, "Explanation")
            .ok_or_else(|| format!("{class}: missing Explanation"))?
            .as_str()
            .ok_or_else(|| format!("{class}: Explanation is not a string"))?
            .trim()
            .to_string();
        if result && explanation.is_empty() {
            return Err(format!("{class}: empty Explanation for a true Result"));
        }
        out.insert(class, Verdict { result, explanation });
    }
    Ok(Verdicts(out))
}

/// Extracts the outermost JSON object holding the five superclass verdicts,
/// ignoring code fences and surrounding prose.
pub fn parse_response(raw: &str) -> Result<Verdicts, ParseFailure> {
    let fail = |reason: String| ParseFailure {
        reason,
        raw: raw.to_string(),
    };
    let mut first_error = None;
    for obj in json_objects(raw) {
        match verdicts_from(&obj) {
            Ok(v) => return Ok(v),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    Err(fail(first_error.unwrap_or_else(|| "no JSON object found".into())))
}

/// Response text in the contract format.
pub fn render_response(verdicts: &Verdicts) -> String {
    let body: Vec<String> = verdicts
        .iter()
        .map(|(c, v)| {
            format!(
                "  \"{}\": {{\"Result\": {}, \"Explanation\": {}}}",
                c.code(),
                v.result,
                Value::String(v.explanation.clone())
            )
        })
        .collect();
    format!("{{\n{}\n}}", body.join(",\n"))
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }
}

/// Completes and parses; backend errors and unparseable text both become a
/// response without verdicts.
pub fn diagnose(backend: &dyn ChatBackend, prompt: &str) -> DiagnosisResponse {
    let start = Instant::now();
    let completion = backend.complete(prompt);
    let latency_ms = start.elapsed().as_millis() as u64;
    let (raw_text, parsed) = match completion {
        Ok(raw) => {
            let parsed = parse_response(&raw).map_err(|f| f.reason);
            (raw, parsed)
        }
        Err(e) => (String::new(), Err(e.to_string())),
    };
    if let Err(reason) = &parsed {
        log::warn!("{}: diagnosis scored as all-false: {reason}", backend.id());
    }
    let (verdicts, parse_error) = match parsed {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e)),
    };
    DiagnosisResponse {
        verdicts,
        parse_error,
        raw_text,
        backend: backend.id(),
        latency_ms,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteChatApi,
    RuleEchoStub,
    FixedScriptStub,
}

impl std::str::FromStr for BackendKind {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "remote" | "remote_chat_api" => Ok(Self::RemoteChatApi),
            "rule_echo" | "rule_echo_stub" => Ok(Self::RuleEchoStub),
            "replay" | "fixed_script" | "fixed_script_stub" => Ok(Self::FixedScriptStub),
            other => Err(LlmError::InvalidConfig(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Full URL of an OpenAI-compatible chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_ms: u64,
    /// First retry delay; doubles per attempt.
    pub backoff_ms: u64,
    pub concurrency_limit: usize,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    /// Replay source for the fixed-script stub, or recording target for others.
    pub transcript_path: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::RuleEchoStub,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            temperature: 0.0,
            max_retries: 3,
            timeout_ms: 60_000,
            backoff_ms: 500,
            concurrency_limit: 4,
            api_key_env: "ECGRAG_LLM_API_KEY".into(),
            transcript_path: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidConfig(format!("temperature {} < 0", self.temperature)));
        }
        if self.concurrency_limit == 0 {
            return Err(LlmError::InvalidConfig("concurrency limit must be at least 1".into()));
        }
        if self.kind == BackendKind::FixedScriptStub && self.transcript_path.is_none() {
            return Err(LlmError::InvalidConfig("replay backend needs a transcript path".into()));
        }
        Ok(())
    }
}

/// Builds the configured backend behind a concurrency gate. Remote and
/// rule-echo responses are appended to `transcript_path` when one is set.
pub fn build_backend(cfg: &BackendConfig, table: &RuleTable) -> Result<Arc<dyn ChatBackend>, LlmError> {
    cfg.validate()?;
    let inner: Arc<dyn ChatBackend> = match cfg.kind {
        BackendKind::RemoteChatApi => Arc::new(RemoteChatBackend::new(cfg.clone())?),
        BackendKind::RuleEchoStub => Arc::new(RuleEchoStub::new(table.clone())),
        BackendKind::FixedScriptStub => {
            let path = cfg.transcript_path.as_ref().expect("validated");
            return Ok(Arc::new(GatedBackend::new(FixedScriptStub::load(path)?, cfg.concurrency_limit)));
        }
    };
    let inner: Arc<dyn ChatBackend> = match &cfg.transcript_path {
        Some(path) => Arc::new(RecordingBackend::new(inner, TranscriptWriter::open(path)?)),
        None => inner,
    };
    Ok(Arc::new(GatedBackend::new(inner, cfg.concurrency_limit)))
}
