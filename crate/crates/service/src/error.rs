use ecgrag_core::delineation::DelineationError;
use ecgrag_core::eval::EvalError;
use ecgrag_core::knowledge::KnowledgeError;
use ecgrag_core::llm::LlmError;
use ecgrag_core::prompt::PromptError;
use ecgrag_core::ptbxl::IngestError;
use ecgrag_core::rules::RuleError;
use thiserror::Error;

/// Domain failures shared by the CLI (exit code 1) and the HTTP API.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Delineation(#[from] DelineationError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("knowledge store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("no dataset directory configured (use --data or data_dir)")]
    NoDataset,
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

impl AppError {
    pub fn file(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::File {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}
