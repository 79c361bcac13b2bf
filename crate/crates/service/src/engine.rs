use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use ecgrag_core::delineation::{ClassicDelineator, DelineatorConfig};
use ecgrag_core::knowledge::{
    build_store, CollectionFilter, Embedder, IndexConfig, KnowledgeStore, LocalEmbedder, Manifest, RemoteEmbedder,
    SearchResults,
};
use ecgrag_core::llm::{build_backend, ChatBackend};
use ecgrag_core::pipeline::{analyze, diagnose_analysis, Analysis, Diagnosis};
use ecgrag_core::prompt::{
    assemble_question_prompt, AblationConfig, Exchange, InstructionTemplate, Preset, Prompt, PromptOptions, StoreRetriever,
};
use ecgrag_core::ptbxl::{EcgRecord, PtbXl};
use ecgrag_core::rules::RuleTable;

use crate::config::{AppConfig, EmbedderKind};
use crate::error::AppError;

/// Everything a request needs: rule table, delineator, embedder, backend and
/// a lazily opened knowledge store. Shared read-only across workers.
pub struct Engine {
    pub config: AppConfig,
    pub table: RuleTable,
    pub delineator: ClassicDelineator,
    pub embedder: Box<dyn Embedder>,
    backend: Option<Arc<dyn ChatBackend>>,
    pub prompt_options: PromptOptions,
    store: OnceLock<Result<KnowledgeStore, String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub prompt: Prompt,
    pub text: String,
    pub backend: String,
}

fn load_table(config: &AppConfig) -> Result<RuleTable, AppError> {
    match &config.rules_path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| AppError::file(path, e))?;
            Ok(RuleTable::parse(&text)?)
        }
        None => Ok(RuleTable::default_table()),
    }
}

fn load_template(path: &Path) -> Result<InstructionTemplate, AppError> {
    let text = fs::read_to_string(path).map_err(|e| AppError::file(path, e))?;
    let version = path.file_stem().and_then(|s| s.to_str()).unwrap_or("custom").to_string();
    Ok(InstructionTemplate {
        version,
        text: text.trim_end().to_string(),
    })
}

impl Engine {
    /// Builds the configured backend. Must run outside an async context when
    /// the backend or embedder is remote.
    pub fn new(config: AppConfig) -> Result<Self, AppError> {
        let table = load_table(&config)?;
        let backend = build_backend(&config.backend, &table)?;
        Self::assemble(config, table, Some(backend))
    }

    /// For verbs that never reach an LLM.
    pub fn without_backend(config: AppConfig) -> Result<Self, AppError> {
        let table = load_table(&config)?;
        Self::assemble(config, table, None)
    }

    /// Uses `backend` in place of the configured one.
    pub fn with_backend(config: AppConfig, backend: Arc<dyn ChatBackend>) -> Result<Self, AppError> {
        let table = load_table(&config)?;
        Self::assemble(config, table, Some(backend))
    }

    fn assemble(config: AppConfig, table: RuleTable, backend: Option<Arc<dyn ChatBackend>>) -> Result<Self, AppError> {
        let embedder: Box<dyn Embedder> = match config.embedder.kind {
            EmbedderKind::Local => Box::new(LocalEmbedder::new(config.embedder.seed)),
            EmbedderKind::Remote => Box::new(RemoteEmbedder::new(config.embedder.remote.clone())?),
        };
        let template = match &config.template_path {
            Some(p) => load_template(p)?,
            None => InstructionTemplate::default(),
        };
        if config.retrieval_k == 0 {
            return Err(AppError::Config("retrieval_k must be at least 1".into()));
        }
        Ok(Self {
            prompt_options: PromptOptions {
                char_budget: config.char_budget,
                template,
            },
            table,
            delineator: ClassicDelineator::new(DelineatorConfig::default()),
            embedder,
            backend,
            config,
            store: OnceLock::new(),
        })
    }

    pub fn backend(&self) -> Result<&dyn ChatBackend, AppError> {
        self.backend
            .as_deref()
            .ok_or_else(|| AppError::Config("no LLM backend configured".into()))
    }

    fn open_store(&self) -> Result<KnowledgeStore, String> {
        if let Some(dir) = self.config.store_path.as_ref().filter(|p| p.is_dir()) {
            log::info!("loading knowledge store from {}", dir.display());
            return KnowledgeStore::load(dir).map_err(|e| e.to_string());
        }
        if let Some(path) = &self.config.manifest {
            log::info!("building knowledge store from {}", path.display());
            let manifest = Manifest::load(path).map_err(|e| e.to_string())?;
            return build_store(&manifest, self.embedder.as_ref(), IndexConfig::default()).map_err(|e| e.to_string());
        }
        Err(match &self.config.store_path {
            Some(p) => format!("{} does not exist and no manifest is configured", p.display()),
            None => "neither store_path nor manifest is configured".into(),
        })
    }

    pub fn store(&self) -> Result<&KnowledgeStore, AppError> {
        self.store
            .get_or_init(|| self.open_store())
            .as_ref()
            .map_err(|e| AppError::StoreUnavailable(e.clone()))
    }

    pub fn retriever(&self) -> Option<StoreRetriever<'_>> {
        self.store().ok().map(|store| StoreRetriever {
            store,
            embedder: self.embedder.as_ref(),
        })
    }

    pub fn preset_config(&self, preset: Preset) -> AblationConfig {
        AblationConfig {
            retrieval_k: self.config.retrieval_k,
            ..preset.config()
        }
    }

    pub fn dataset(&self, override_dir: Option<&Path>) -> Result<PtbXl, AppError> {
        let dir = override_dir.or(self.config.data_dir.as_deref()).ok_or(AppError::NoDataset)?;
        Ok(PtbXl::open(dir)?)
    }

    pub fn analyze(&self, record: &EcgRecord) -> Result<Analysis, AppError> {
        Ok(analyze(record, &self.delineator, &self.table)?)
    }

    /// Store-dependent presets fail with `StoreUnavailable` when no store opens.
    pub fn diagnose(&self, analysis: &Analysis, preset: Preset) -> Result<Diagnosis, AppError> {
        let cfg = self.preset_config(preset);
        let retriever = self.retriever();
        if cfg.needs_store() && retriever.is_none() {
            self.store()?;
        }
        Ok(diagnose_analysis(
            analysis,
            retriever.as_ref().map(|r| r as _),
            &cfg,
            &self.prompt_options,
            self.backend()?,
        )?)
    }

    pub fn ask(&self, analysis: &Analysis, preset: Preset, question: &str, history: &[Exchange]) -> Result<Answer, AppError> {
        let cfg = self.preset_config(preset);
        let retriever = self.retriever();
        if cfg.needs_store() && retriever.is_none() {
            self.store()?;
        }
        let prompt = assemble_question_prompt(
            &analysis.features,
            &analysis.report,
            retriever.as_ref().map(|r| r as _),
            &cfg,
            &self.prompt_options,
            question,
            history,
        )?;
        let backend = self.backend()?;
        let text = backend.complete(&prompt.text)?;
        Ok(Answer {
            prompt,
            text,
            backend: backend.id(),
        })
    }

    pub fn search(&self, query: &str, filter: CollectionFilter, k: usize) -> Result<SearchResults, AppError> {
        let store = self.store()?;
        Ok(store.search(self.embedder.as_ref(), query, filter, k)?)
    }
}
