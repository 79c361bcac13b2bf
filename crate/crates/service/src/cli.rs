use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{ArgGroup, Args, Parser, Subcommand};
use ecgrag_core::eval::{analyze_records, render_table_text, run_ablation, write_archive};
use ecgrag_core::features::FeatureSet;
use ecgrag_core::knowledge::{build_store, Collection, CollectionFilter, IndexConfig, Manifest};
use ecgrag_core::llm::BackendKind;
use ecgrag_core::prompt::{AblationConfig, Preset, Provenance};
use ecgrag_core::ptbxl::{CanonicalRecord, EcgRecord};
use ecgrag_core::rules::evaluate_rules;
use serde::Serialize;

use crate::api::{router, AppState};
use crate::config::AppConfig;
use crate::engine::Engine;
use crate::error::AppError;

#[derive(Debug, Parser)]
#[command(name = "ecgrag", version, about = "Retrieval-augmented zero-shot 12-lead ECG diagnosis")]
pub struct Cli {
    /// Shared TOML configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Summarise a PTB-XL directory, optionally one fold.
    Ingest(IngestArgs),
    /// Fiducial points of one record as JSON.
    Delineate(RecordArgs),
    /// Feature set of one record as JSON.
    Features(RecordArgs),
    /// Rule report for a feature-set JSON file.
    Rules(RulesArgs),
    /// Build or query the knowledge store.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Diagnose one record with one preset.
    Diagnose(DiagnoseArgs),
    /// Score presets over a dataset and write the comparison table.
    Evaluate(EvaluateArgs),
    /// Run the HTTP JSON service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub fold: Option<i64>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["id", "record"])))]
pub struct RecordArgs {
    /// PTB-XL root for `--id`.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Record id inside the dataset.
    #[arg(long)]
    pub id: Option<u32>,
    /// Canonical record JSON with a `signal` matrix.
    #[arg(long, value_name = "FILE")]
    pub record: Option<PathBuf>,
    /// Rule table TOML.
    #[arg(long, value_name = "FILE")]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RulesArgs {
    /// Feature-set JSON as written by `features`.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Chunk, embed and index every manifest source, then persist.
    Build {
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Top-k passages for a query.
    Query {
        #[arg(long, value_name = "DIR")]
        index: Option<PathBuf>,
        #[arg(long)]
        q: String,
        #[arg(long, default_value = "both", value_parser = parse_collection)]
        collection: CollectionFilter,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// remote, rule-echo or replay.
    #[arg(long, value_parser = parse_backend)]
    pub backend: Option<BackendKind>,
    /// Replay source for `replay`; recording target otherwise.
    #[arg(long, value_name = "FILE")]
    pub transcripts: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Persisted knowledge store.
    #[arg(long, value_name = "DIR")]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub record: RecordArgs,
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Include the full prompt text in the output.
    #[arg(long)]
    pub show_prompt: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Stratified fold; every record when omitted.
    #[arg(long)]
    pub fold: Option<i64>,
    /// `all` or a comma-separated list of preset names.
    #[arg(long, default_value = "all", value_parser = parse_presets)]
    pub preset: PresetList,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Archive directory for tables, reports, artifacts and transcripts.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "ADDR")]
    pub bind: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub session_dir: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PresetList(pub Vec<Preset>);

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e: ecgrag_core::llm::LlmError| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: ecgrag_core::prompt::PromptError| e.to_string())
}

fn parse_presets(s: &str) -> Result<PresetList, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(PresetList(Preset::ALL.to_vec()));
    }
    let list = s.split(',').map(|p| parse_preset(p.trim())).collect::<Result<Vec<_>, _>>()?;
    Ok(PresetList(list))
}

fn parse_collection(s: &str) -> Result<CollectionFilter, String> {
    match s.to_ascii_lowercase().as_str() {
        "documents" => Ok(CollectionFilter::Documents),
        "knowledge" => Ok(CollectionFilter::Knowledge),
        "both" | "all" => Ok(CollectionFilter::Both),
        other => Err(format!("unknown collection {other:?} (expected documents, knowledge or both)")),
    }
}

fn emit(value: &impl Serialize) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn apply_backend(cfg: &mut AppConfig, args: &BackendArgs) {
    if let Some(kind) = args.backend {
        cfg.backend.kind = kind;
    }
    if let Some(t) = &args.transcripts {
        cfg.backend.transcript_path = Some(t.clone());
    }
    if let Some(m) = &args.model {
        cfg.backend.model = m.clone();
    }
    if let Some(e) = &args.endpoint {
        cfg.backend.endpoint = e.clone();
    }
    if let Some(i) = &args.index {
        cfg.store_path = Some(i.clone());
    }
}

fn load_record(engine: &Engine, args: &RecordArgs) -> anyhow::Result<EcgRecord> {
    if let Some(path) = &args.record {
        let text = fs::read_to_string(path).map_err(|e| AppError::file(path, e))?;
        let canonical: CanonicalRecord =
            serde_json::from_str(&text).with_context(|| format!("{}: not a canonical record", path.display()))?;
        return Ok(canonical.into_record()?);
    }
    let id = args.id.expect("clap requires --id or --record");
    let dataset = engine.dataset(args.data.as_deref())?;
    Ok(dataset.load(id)?.0)
}

fn with_rules(mut cfg: AppConfig, rules: &Option<PathBuf>) -> AppConfig {
    if let Some(r) = rules {
        cfg.rules_path = Some(r.clone());
    }
    cfg
}

#[derive(Serialize)]
struct IngestSummary {
    root: PathBuf,
    total: usize,
    fold: Option<i64>,
    selected: usize,
    records: Vec<CanonicalRecord>,
}

#[derive(Serialize)]
struct DiagnoseOutput {
    ecg_id: u32,
    preset: Preset,
    config: AblationConfig,
    response: ecgrag_core::llm::DiagnosisResponse,
    prompt_hash: String,
    template_version: String,
    provenance: Vec<Provenance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = AppConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(args) => {
            let engine = Engine::without_backend(cfg)?;
            let dataset = engine.dataset(args.data.as_deref())?;
            let ids = match args.fold {
                Some(f) => dataset.select_fold(f)?,
                None => dataset.ids(),
            };
            let mut records = Vec::with_capacity(ids.len());
            for id in &ids {
                let labels = dataset.labeling(*id)?.labels;
                let (record, source) = dataset.load(*id)?;
                let mut c = CanonicalRecord::describe(&record, Some(labels));
                c.source_file = Some(source.path.display().to_string());
                records.push(c);
            }
            emit(&IngestSummary {
                root: dataset.root().to_path_buf(),
                total: dataset.len(),
                fold: args.fold,
                selected: ids.len(),
                records,
            })
        }
        Command::Delineate(args) => {
            let engine = Engine::without_backend(with_rules(cfg, &args.rules))?;
            let record = load_record(&engine, &args)?;
            emit(&engine.analyze(&record)?.fiducials)
        }
        Command::Features(args) => {
            let engine = Engine::without_backend(with_rules(cfg, &args.rules))?;
            let record = load_record(&engine, &args)?;
            emit(&engine.analyze(&record)?.features)
        }
        Command::Rules(args) => {
            let engine = Engine::without_backend(with_rules(cfg, &args.rules))?;
            let text = fs::read_to_string(&args.input).map_err(|e| AppError::file(&args.input, e))?;
            let features: FeatureSet = serde_json::from_str(&text)
                .with_context(|| format!("{}: not a feature-set JSON", args.input.display()))?;
            emit(&evaluate_rules(&features, &engine.table))
        }
        Command::Index(IndexCommand::Build { manifest, out }) => {
            let manifest_path = manifest.or(cfg.manifest.clone()).context("no manifest given (--manifest or manifest)")?;
            let out = out.or(cfg.store_path.clone()).context("no output directory given (--out or store_path)")?;
            let engine = Engine::without_backend(cfg)?;
            let start = Instant::now();
            let manifest = Manifest::load(&manifest_path)?;
            let store = build_store(&manifest, engine.embedder.as_ref(), IndexConfig::default())?;
            store.persist(&out)?;
            emit(&serde_json::json!({
                "out": out,
                "embedder": store.embedder_id(),
                "documents": store.collection_len(Collection::Documents),
                "knowledge": store.collection_len(Collection::Knowledge),
                "elapsed_ms": start.elapsed().as_millis() as u64,
            }))
        }
        Command::Index(IndexCommand::Query { index, q, collection, k }) => {
            let mut cfg = cfg;
            if let Some(i) = index {
                cfg.store_path = Some(i);
            }
            let engine = Engine::without_backend(cfg)?;
            let results = engine.search(&q, collection, k)?;
            emit(&results)
        }
        Command::Diagnose(args) => {
            let mut cfg = with_rules(cfg, &args.record.rules);
            apply_backend(&mut cfg, &args.backend);
            let preset = args.preset.unwrap_or(cfg.default_preset);
            let engine = Engine::new(cfg)?;
            let record = load_record(&engine, &args.record)?;
            let analysis = engine.analyze(&record)?;
            let d = engine.diagnose(&analysis, preset)?;
            emit(&DiagnoseOutput {
                ecg_id: record.ecg_id,
                preset,
                config: engine.preset_config(preset),
                prompt_hash: d.prompt.hash(),
                template_version: d.prompt.template_version.clone(),
                provenance: d.prompt.provenance.clone(),
                prompt: args.show_prompt.then(|| d.prompt.text.clone()),
                response: d.response,
            })
        }
        Command::Evaluate(args) => evaluate(cfg, args),
        Command::Serve(args) => serve(cfg, args),
    }
}

fn evaluate(cfg: AppConfig, args: EvaluateArgs) -> anyhow::Result<()> {
    let mut cfg = with_rules(cfg, &args.rules);
    apply_backend(&mut cfg, &args.backend);
    let engine = Engine::new(cfg)?;
    let dataset = engine.dataset(args.data.as_deref())?;
    let ids = match args.fold {
        Some(f) => dataset.select_fold(f)?,
        None => dataset.ids(),
    };
    if ids.is_empty() {
        bail!("no records selected");
    }
    log::info!("analysing {} records", ids.len());
    let records = analyze_records(&dataset, &ids, &engine.delineator, &engine.table)?;
    let presets: Vec<AblationConfig> = args.preset.0.iter().map(|p| engine.preset_config(*p)).collect();
    if presets.iter().any(AblationConfig::needs_store) {
        engine.store()?;
    }
    let retriever = engine.retriever();
    let outcome = run_ablation(
        &records,
        &presets,
        engine.backend()?,
        retriever.as_ref().map(|r| r as _),
        &engine.prompt_options,
    )?;
    if let Some(out) = &args.out {
        write_archive(&outcome, out)?;
        log::info!("archive written to {}", out.display());
    }
    print!("{}", render_table_text(&outcome.table_rows()));
    Ok(())
}

fn serve(mut cfg: AppConfig, args: ServeArgs) -> anyhow::Result<()> {
    apply_backend(&mut cfg, &args.backend);
    if let Some(b) = args.bind {
        cfg.server.bind = b;
    }
    if let Some(d) = args.session_dir {
        cfg.server.session_dir = Some(d);
    }
    let bind = cfg.server.bind.clone();
    let state = AppState::new(Engine::new(cfg)?);
    // Outlives the runtime so blocking HTTP clients inside are dropped outside it.
    let keep = state.clone();
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("bind {bind}"))?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    drop(runtime);
    drop(keep);
    Ok(())
}
