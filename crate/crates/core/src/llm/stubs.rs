use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{render_response, ChatBackend, LlmError, Verdict, Verdicts};
use crate::prompt::{prompt_hash, section_body};
use crate::rules::{project_superclasses, Role, RuleOutcome, RuleReport, RuleTable};
use crate::{Superclass, SuperclassFlags};

/// Answers with the superclass projection of the True/False lines found in the
/// prompt's rule-results section.
#[derive(Debug, Clone)]
pub struct RuleEchoStub {
    table: RuleTable,
}

struct EchoedRule {
    name: String,
    fired: bool,
    evidence: Option<String>,
}

fn echoed_rules(section: &str) -> Vec<EchoedRule> {
    let mut out: Vec<EchoedRule> = Vec::new();
    for line in section.lines() {
        if let Some(ev) = line.strip_prefix("  evidence: ") {
            if let Some(last) = out.last_mut() {
                last.evidence = Some(ev.trim().to_string());
            }
            continue;
        }
        let Some((name, value)) = line.strip_prefix("- ").and_then(|l| l.rsplit_once(": ")) else {
            continue;
        };
        let fired = match value.trim() {
            "True" => true,
            "False" => false,
            _ => continue,
        };
        out.push(EchoedRule {
            name: name.to_string(),
            fired,
            evidence: None,
        });
    }
    out
}

impl RuleEchoStub {
    pub fn new(table: RuleTable) -> Self {
        Self { table }
    }

    pub fn respond(&self, prompt: &str) -> Verdicts {
        let echoed = match section_body(prompt, 2) {
            Some(body) if !body.starts_with("(omitted") => echoed_rules(body),
            _ => Vec::new(),
        };
        if echoed.is_empty() {
            return Verdicts::from_fn(|c| Verdict {
                result: false,
                explanation: format!("No rule evidence is available for {}.", c.display_name()),
            });
        }
        let mut report = RuleReport {
            rules: Vec::new(),
            superclasses: SuperclassFlags::NONE,
            warnings: Vec::new(),
        };
        let mut cited: HashMap<String, Option<String>> = HashMap::new();
        for e in echoed {
            let Some(rule) = self.table.rules().iter().find(|r| r.name == e.name) else {
                log::debug!("rule echo: unknown rule line {:?}", e.name);
                continue;
            };
            cited.insert(rule.name.clone(), e.evidence);
            report.rules.push(RuleOutcome {
                id: rule.id.clone(),
                name: rule.name.clone(),
                role: rule.role,
                superclass: rule.superclass,
                fired: e.fired,
                evidence: Vec::new(),
            });
        }
        let flags = project_superclasses(&report);
        let cite = |r: &RuleOutcome| match cited.get(&r.name).cloned().flatten() {
            Some(ev) => format!("{} ({ev})", r.name),
            None => r.name.clone(),
        };
        Verdicts::from_fn(|c| {
            if !flags.get(c) {
                return Verdict {
                    result: false,
                    explanation: format!("No rule evidence for {}.", c.display_name()),
                };
            }
            let supporting: Vec<String> = report
                .fired()
                .filter(|r| match c {
                    Superclass::Norm => r.role == Role::Normal,
                    _ => r.superclass == Some(c),
                })
                .map(cite)
                .collect();
            let explanation = match c {
                Superclass::Norm => format!("No abnormal finding; rule results show {}.", supporting.join("; ")),
                _ => format!("Rule results indicate {}: {}.", c.display_name(), supporting.join("; ")),
            };
            Verdict {
                result: true,
                explanation,
            }
        })
    }
}

impl ChatBackend for RuleEchoStub {
    fn id(&self) -> String {
        "rule-echo".into()
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        Ok(render_response(&self.respond(prompt)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt_hash: String,
    pub raw_response: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

/// Append-only JSON-lines transcript file.
#[derive(Debug)]
pub struct TranscriptWriter {
    file: Mutex<File>,
}

impl TranscriptWriter {
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| LlmError::Transcript(format!("{}: {e}", dir.display())))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        Ok(Self { file: Mutex::new(file) })
    }

    pub fn append(&self, prompt: &str, raw_response: &str) -> Result<(), LlmError> {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let entry = TranscriptEntry {
            prompt_hash: prompt_hash(prompt),
            raw_response: raw_response.to_string(),
            timestamp,
        };
        let line = serde_json::to_string(&entry).map_err(|e| LlmError::Transcript(e.to_string()))?;
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(f, "{line}").map_err(|e| LlmError::Transcript(e.to_string()))
    }
}

pub fn read_transcripts(path: &Path) -> Result<Vec<TranscriptEntry>, LlmError> {
    let file = File::open(path).map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            let l = l.map_err(|e| LlmError::Transcript(e.to_string()))?;
            serde_json::from_str(&l).map_err(|e| LlmError::Transcript(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Replays recorded responses keyed by prompt hash; the latest entry wins.
#[derive(Debug, Clone, Default)]
pub struct FixedScriptStub {
    responses: HashMap<String, String>,
}

impl FixedScriptStub {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        Self {
            responses: entries.into_iter().map(|e| (e.prompt_hash, e.raw_response)).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(read_transcripts(path)?))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for FixedScriptStub {
    fn id(&self) -> String {
        "replay".into()
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let hash = prompt_hash(prompt);
        self.responses.get(&hash).cloned().ok_or(LlmError::StubMiss(hash))
    }
}

/// Appends every successful completion of `inner` to a transcript.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    writer: TranscriptWriter,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>, writer: TranscriptWriter) -> Self {
        Self { inner, writer }
    }
}

impl ChatBackend for RecordingBackend {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let raw = self.inner.complete(prompt)?;
        self.writer.append(prompt, &raw)?;
        Ok(raw)
    }
}
