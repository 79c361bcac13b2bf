use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use ecgrag_core::features::FeatureSet;
use ecgrag_core::knowledge::{CollectionFilter, Hit, KnowledgeError};
use ecgrag_core::llm::*;
use ecgrag_core::prompt::{assemble_prompt, section_header, Preset, PromptOptions, Retriever};
use ecgrag_core::rules::{evaluate_rules, project_superclasses, RuleTable};
use ecgrag_core::{fixtures, Superclass, SuperclassFlags};
use proptest::prelude::*;

const OTHERS_FALSE: &str = r#""NORM": {"Result": false, "Explanation": "QRS is prolonged."},
  "HYP": {"Result": false, "Explanation": "No voltage criteria met."},
  "MI": {"Result": false, "Explanation": "No pathological Q waves."},
  "STTC": {"Result": false, "Explanation": "No ST-T abnormality."}"#;

fn example_response() -> String {
    format!(
        "{{\n  \"CD\": {{\n    \"Result\": true,\n    \"Explanation\": \"The QRS duration is prolonged (median of 113 ms), \
         indicating a conduction disturbance. The presence of a QS pattern in leads V1 and V2 further supports this diagnosis.\"\n  }},\n  {OTHERS_FALSE}\n}}"
    )
}

#[test]
fn parses_the_conduction_disturbance_example() {
    let v = parse_response(&example_response()).unwrap();
    assert!(v.get(Superclass::Cd).result);
    assert!(v.get(Superclass::Cd).explanation.contains("median of 113 ms"));
    assert_eq!(v.flags(), SuperclassFlags::from_fn(|c| c == Superclass::Cd));
}

#[test]
fn fenced_json_with_prose_parses_like_bare_json() {
    let bare = parse_response(&example_response()).unwrap();
    let fenced = format!("Here is my assessment:\n```json\n{}\n```\nLet me know if you need more.", example_response());
    assert_eq!(parse_response(&fenced).unwrap(), bare);
}

#[test]
fn prose_without_json_is_a_parse_failure() {
    let err = parse_response("I cannot determine.").unwrap_err();
    assert_eq!(err.raw, "I cannot determine.");
    assert!(err.reason.contains("no JSON object"));
}

#[test]
fn missing_class_and_bad_types_are_parse_failures() {
    let missing = r#"{"CD": {"Result": true, "Explanation": "wide QRS"}}"#;
    assert!(parse_response(missing).is_err());
    let non_bool = example_response().replace("\"Result\": true", "\"Result\": \"yes\"");
    assert!(parse_response(&non_bool).is_err());
    let empty_expl = format!("{{\"CD\": {{\"Result\": true, \"Explanation\": \"  \"}}, {OTHERS_FALSE}}}");
    assert!(parse_response(&empty_expl).is_err());
}

#[test]
fn field_names_are_case_insensitive_but_class_names_are_not() {
    let lower = example_response().replace("\"Result\"", "\"result\"").replace("\"Explanation\"", "\"EXPLANATION\"");
    assert!(parse_response(&lower).unwrap().get(Superclass::Cd).result);
    let lower_class = example_response().replace("\"CD\"", "\"cd\"");
    assert!(parse_response(&lower_class).is_err());
}

#[test]
fn nested_objects_resolve_to_the_verdict_object() {
    let wrapped = format!("{{\"diagnosis\": {}}}", example_response());
    assert!(parse_response(&wrapped).unwrap().get(Superclass::Cd).result);
}

struct Echo(String);

impl ChatBackend for Echo {
    fn id(&self) -> String {
        "fixed".into()
    }
    fn complete(&self, _: &str) -> Result<String, LlmError> {
        Ok(self.0.clone())
    }
}

struct Down;

impl ChatBackend for Down {
    fn id(&self) -> String {
        "down".into()
    }
    fn complete(&self, _: &str) -> Result<String, LlmError> {
        Err(LlmError::BackendTimeout {
            attempts: 1,
            message: "connection refused".into(),
        })
    }
}

#[test]
fn diagnose_scores_failures_as_all_false() {
    let ok = diagnose(&Echo(example_response()), "p");
    assert_eq!(ok.predictions(), SuperclassFlags::from_fn(|c| c == Superclass::Cd));
    assert!(!ok.is_parse_failure());
    let bad = diagnose(&Echo("I cannot determine.".into()), "p");
    assert!(bad.is_parse_failure());
    assert_eq!(bad.predictions(), SuperclassFlags::NONE);
    assert_eq!(bad.raw_text, "I cannot determine.");
    let down = diagnose(&Down, "p");
    assert_eq!(down.predictions(), SuperclassFlags::NONE);
    assert!(down.parse_error.unwrap().contains("timed out"));
}

fn arb_verdicts() -> impl Strategy<Value = Verdicts> {
    prop::collection::vec((any::<bool>(), "[ -~]{0,40}", "\\PC{0,20}"), 5).prop_map(|items| {
        Verdicts::from_fn(|c| {
            let (result, a, b) = &items[c.index()];
            let mut explanation = format!("{a}{b}").trim().to_string();
            if *result && explanation.is_empty() {
                explanation = "x".into();
            }
            Verdict {
                result: *result,
                explanation,
            }
        })
    })
}

proptest! {
    #[test]
    fn render_then_parse_is_identity(v in arb_verdicts()) {
        let parsed = parse_response(&render_response(&v)).unwrap();
        prop_assert_eq!(parsed.flags(), v.flags());
        prop_assert_eq!(parsed, v);
    }
}

fn cd_features() -> FeatureSet {
    fixtures::cd_features(21764)
}

fn normal_features() -> FeatureSet {
    fixtures::normal_features(1)
}

struct NoPassages;

impl Retriever for NoPassages {
    fn retrieve(&self, _: &str, _: CollectionFilter, _: usize) -> Result<Vec<Hit>, KnowledgeError> {
        Ok(Vec::new())
    }
}

fn prompt_for(fs: &FeatureSet, preset: Preset) -> String {
    let report = evaluate_rules(fs, &RuleTable::default_table());
    assemble_prompt(fs, &report, Some(&NoPassages), &preset.config(), &PromptOptions::default())
        .unwrap()
        .text
}

#[test]
fn rule_echo_on_a_cd_only_section_marks_only_cd() {
    let stub = RuleEchoStub::new(RuleTable::default_table());
    let fs = cd_features();
    let report = evaluate_rules(&fs, &RuleTable::default_table());
    assert_eq!(report.superclasses, SuperclassFlags::from_fn(|c| c == Superclass::Cd));
    let raw = stub.complete(&prompt_for(&fs, Preset::Proposed)).unwrap();
    let v = parse_response(&raw).unwrap();
    assert_eq!(v.flags(), SuperclassFlags::from_fn(|c| c == Superclass::Cd));
    assert!(v.get(Superclass::Cd).explanation.contains("113 ms"), "{}", v.get(Superclass::Cd).explanation);
}

#[test]
fn rule_echo_on_a_handwritten_section_follows_its_lines() {
    let stub = RuleEchoStub::new(RuleTable::default_table());
    let table = RuleTable::default_table();
    let ivcd = table.get("nonspecific_ivcd").unwrap();
    let mut body = String::new();
    for r in table.rules() {
        body.push_str(&format!("- {}: {}\n", r.name, if r.id == ivcd.id { "True" } else { "False" }));
    }
    let prompt = format!("{}\nfeatures\n\n{}\n{body}\nQuality warnings: none\n\n{}\nnone", section_header(1), section_header(2), section_header(3));
    let v = stub.respond(&prompt);
    assert_eq!(v.flags(), SuperclassFlags::from_fn(|c| c == Superclass::Cd));
}

#[test]
fn rule_echo_on_a_base_prompt_is_all_false() {
    let stub = RuleEchoStub::new(RuleTable::default_table());
    let v = parse_response(&stub.complete(&prompt_for(&cd_features(), Preset::Base)).unwrap()).unwrap();
    assert_eq!(v.flags(), SuperclassFlags::NONE);
    for (_, verdict) in v.iter() {
        assert!(verdict.explanation.to_lowercase().contains("no rule evidence"));
    }
}

#[test]
fn rule_echo_matches_the_rule_projection_on_normal_features() {
    let stub = RuleEchoStub::new(RuleTable::default_table());
    let fs = normal_features();
    let expected = project_superclasses(&evaluate_rules(&fs, &RuleTable::default_table()));
    for preset in [Preset::Ablation1, Preset::Ablation2, Preset::Ablation3, Preset::Proposed] {
        assert_eq!(stub.respond(&prompt_for(&fs, preset)).flags(), expected, "{preset}");
    }
}

#[test]
fn replay_returns_recorded_responses_and_misses_otherwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t/transcripts.jsonl");
    let recorder = RecordingBackend::new(Arc::new(Echo(example_response())), TranscriptWriter::open(&path).unwrap());
    assert_eq!(recorder.complete("prompt one").unwrap(), example_response());
    let entries = read_transcripts(&path).unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].prompt_hash, ecgrag_core::prompt::prompt_hash("prompt one"));
    let replay = FixedScriptStub::load(&path).unwrap();
    assert_eq!(replay.complete("prompt one").unwrap(), example_response());
    assert!(matches!(replay.complete("prompt two"), Err(LlmError::StubMiss(_))));
}

#[test]
fn build_backend_wires_replay_and_rejects_bad_configs() {
    let table = RuleTable::default_table();
    let cfg = BackendConfig {
        kind: BackendKind::FixedScriptStub,
        ..BackendConfig::default()
    };
    assert!(matches!(build_backend(&cfg, &table), Err(LlmError::InvalidConfig(_))));
    let cfg = BackendConfig {
        temperature: -0.1,
        ..BackendConfig::default()
    };
    assert!(build_backend(&cfg, &table).is_err());
    let cfg = BackendConfig {
        concurrency_limit: 0,
        ..BackendConfig::default()
    };
    assert!(build_backend(&cfg, &table).is_err());
    assert_eq!(build_backend(&BackendConfig::default(), &table).unwrap().id(), "rule-echo");
    assert_eq!("rule-echo".parse::<BackendKind>().unwrap(), BackendKind::RuleEchoStub);
    assert_eq!("replay".parse::<BackendKind>().unwrap(), BackendKind::FixedScriptStub);
    assert_eq!("remote".parse::<BackendKind>().unwrap(), BackendKind::RemoteChatApi);
    assert!("gpt".parse::<BackendKind>().is_err());
}

/// Serves the scripted (status, body) pairs in order, one connection each,
/// and returns the captured request heads and bodies.
fn mock_server(script: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in script {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
                head.push_str(&line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.push(format!("{head}\n{}", String::from_utf8(buf).unwrap()));
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
        seen
    });
    (url, handle)
}

fn remote_cfg(endpoint: String, key_env: &str) -> BackendConfig {
    BackendConfig {
        kind: BackendKind::RemoteChatApi,
        endpoint,
        max_retries: 2,
        backoff_ms: 10,
        timeout_ms: 5_000,
        api_key_env: key_env.into(),
        ..BackendConfig::default()
    }
}

fn chat_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn remote_retries_a_server_error_then_succeeds() {
    std::env::set_var("ECGRAG_TEST_KEY_RETRY", "sk-test");
    let (url, server) = mock_server(vec![(500, "{}".into()), (200, chat_body(&example_response()))]);
    let backend = RemoteChatBackend::new(remote_cfg(url, "ECGRAG_TEST_KEY_RETRY")).unwrap();
    let raw = backend.complete("diagnose this").unwrap();
    assert_eq!(raw, example_response());
    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 2);
    assert!(seen[1].to_ascii_lowercase().contains("authorization: bearer sk-test"));
    let body: serde_json::Value = serde_json::from_str(seen[1].split_once("\n\n").unwrap().1).unwrap();
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "diagnose this");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["model"], "gpt-4o-mini");
}

#[test]
fn remote_refuses_on_401_without_retrying() {
    std::env::set_var("ECGRAG_TEST_KEY_401", "sk-bad");
    let (url, server) = mock_server(vec![(401, "{}".into())]);
    let backend = RemoteChatBackend::new(remote_cfg(url, "ECGRAG_TEST_KEY_401")).unwrap();
    assert!(matches!(backend.complete("p"), Err(LlmError::BackendRefused(_))));
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn remote_with_network_down_times_out_after_retries() {
    std::env::set_var("ECGRAG_TEST_KEY_DOWN", "sk-test");
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = RemoteChatBackend::new(remote_cfg(format!("http://127.0.0.1:{port}/v1"), "ECGRAG_TEST_KEY_DOWN")).unwrap();
    match backend.complete("p") {
        Err(LlmError::BackendTimeout { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected timeout, got {other:?}"),
    }
}

#[test]
fn remote_without_a_key_is_refused() {
    let backend = RemoteChatBackend::new(remote_cfg("http://127.0.0.1:9/".into(), "ECGRAG_TEST_KEY_UNSET")).unwrap();
    assert!(matches!(backend.complete("p"), Err(LlmError::BackendRefused(_))));
}

struct Slow {
    active: AtomicUsize,
    peak: AtomicUsize,
}

impl ChatBackend for Slow {
    fn id(&self) -> String {
        "slow".into()
    }
    fn complete(&self, _: &str) -> Result<String, LlmError> {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(5));
        self.active.fetch_sub(1, Ordering::SeqCst);
        Ok(String::new())
    }
}

#[test]
fn concurrency_limit_is_never_exceeded() {
    for limit in [1, 2, 3] {
        let inner = Slow {
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        };
        let gated = Arc::new(GatedBackend::new(inner, limit));
        thread::scope(|s| {
            for _ in 0..12 {
                let g = gated.clone();
                s.spawn(move || {
                    for _ in 0..4 {
                        g.complete("p").unwrap();
                    }
                });
            }
        });
        assert!(gated.gate().peak() <= limit);
        assert_eq!(gated.gate().peak(), limit, "12 threads should saturate the gate");
        assert_eq!(gated.gate().in_flight(), 0);
    }
}
