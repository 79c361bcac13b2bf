use std::thread;
use std::time::Duration;

use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{BackendConfig, ChatBackend, LlmError};

/// OpenAI-compatible chat-completions client: one user message per prompt,
/// exponential backoff on transient failures.
#[derive(Debug)]
pub struct RemoteChatBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Transient(String),
    Fatal(LlmError),
}

impl RemoteChatBackend {
    pub fn new(config: BackendConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| LlmError::InvalidConfig(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn attempt(&self, key: &str, prompt: &str) -> Attempt {
        let request = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.config.temperature,
        };
        let response = match self.client.post(&self.config.endpoint).bearer_auth(key).json(&request).send() {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = response.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Attempt::Fatal(LlmError::BackendRefused(format!("HTTP {status}")));
        }
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() || status == StatusCode::REQUEST_TIMEOUT {
            return Attempt::Transient(format!("HTTP {status}"));
        }
        if !status.is_success() {
            return Attempt::Fatal(LlmError::BackendRefused(format!("HTTP {status}")));
        }
        match response.json::<ChatResponse>() {
            Ok(body) => match body.choices.into_iter().next().and_then(|c| c.message.content) {
                Some(text) => Attempt::Done(text),
                None => Attempt::Fatal(LlmError::BackendRefused("response has no message content".into())),
            },
            Err(e) => Attempt::Transient(e.to_string()),
        }
    }
}

impl ChatBackend for RemoteChatBackend {
    fn id(&self) -> String {
        format!("remote/{}", self.config.model)
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let key = std::env::var(&self.config.api_key_env).map_err(|_| {
            LlmError::BackendRefused(format!("environment variable {} is not set", self.config.api_key_env))
        })?;
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                log::debug!("retry {attempt} after {delay} ms: {last}");
                thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&key, prompt) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(msg) => last = msg,
            }
        }
        if last.contains("429") {
            return Err(LlmError::BackendRefused(format!("rate limited after {attempts} attempt(s)")));
        }
        Err(LlmError::BackendTimeout { attempts, message: last })
    }
}
