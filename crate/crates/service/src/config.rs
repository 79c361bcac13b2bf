use std::fs;
use std::path::{Path, PathBuf};

use ecgrag_core::knowledge::{LocalEmbedder, RemoteEmbedderConfig};
use ecgrag_core::llm::BackendConfig;
use ecgrag_core::prompt::{Preset, DEFAULT_CHAR_BUDGET, DEFAULT_RETRIEVAL_K};
use serde::{Deserialize, Serialize};

use crate::error::AppError;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    /// Projection seed of the local embedder.
    pub seed: u64,
    pub remote: RemoteEmbedderConfig,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Local,
            seed: LocalEmbedder::DEFAULT_SEED,
            remote: RemoteEmbedderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Sessions are also written here as JSON when set.
    pub session_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: DEFAULT_BIND.into(),
            session_dir: None,
        }
    }
}

/// Shared configuration file read by every verb. Relative paths are resolved
/// against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// PTB-XL root (holds `ptbxl_database.csv`).
    pub data_dir: Option<PathBuf>,
    /// Persisted knowledge store directory.
    pub store_path: Option<PathBuf>,
    /// Corpus manifest; the store is built in memory from it when `store_path`
    /// is unset or missing.
    pub manifest: Option<PathBuf>,
    /// Rule table TOML; the bundled table when unset.
    pub rules_path: Option<PathBuf>,
    /// Instruction template text; the bundled template when unset.
    pub template_path: Option<PathBuf>,
    pub default_preset: Preset,
    pub retrieval_k: usize,
    pub char_budget: usize,
    pub backend: BackendConfig,
    pub embedder: EmbedderConfig,
    pub server: ServerConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            store_path: None,
            manifest: None,
            rules_path: None,
            template_path: None,
            default_preset: Preset::Proposed,
            retrieval_k: DEFAULT_RETRIEVAL_K,
            char_budget: DEFAULT_CHAR_BUDGET,
            backend: BackendConfig::default(),
            embedder: EmbedderConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl AppConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, AppError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        for p in [
            &mut cfg.data_dir,
            &mut cfg.store_path,
            &mut cfg.manifest,
            &mut cfg.rules_path,
            &mut cfg.template_path,
            &mut cfg.backend.transcript_path,
            &mut cfg.server.session_dir,
        ] {
            rebase(base, p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, AppError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
