//! Confusion counts, PPV/NPV/sensitivity/specificity and the five-preset
//! ablation run with its audit archive.

mod table;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delineation::{DelineationError, Delineator};
use crate::llm::{ChatBackend, TranscriptEntry};
use crate::pipeline::{analyze, diagnose_analysis, Analysis};
use crate::prompt::{AblationConfig, PromptError, PromptOptions, Provenance, Retriever};
use crate::ptbxl::{IngestError, PtbXl};
use crate::rules::RuleTable;
use crate::{Superclass, SuperclassFlags};

pub use table::{render_table_csv, render_table_text, TableRow};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("record {ecg_id}: {source}")]
    Delineation {
        ecg_id: u32,
        source: DelineationError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("archive: {0}")]
    Archive(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Per-superclass tallies. Merging is associative and commutative.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts(pub BTreeMap<Superclass, ClassCounts>);

impl ConfusionCounts {
    pub fn new() -> Self {
        Self(Superclass::ALL.iter().map(|c| (*c, ClassCounts::default())).collect())
    }

    pub fn get(&self, class: Superclass) -> ClassCounts {
        self.0.get(&class).copied().unwrap_or_default()
    }

    pub fn record(&mut self, predicted: SuperclassFlags, actual: SuperclassFlags) {
        for c in Superclass::ALL {
            self.0.entry(c).or_default().record(predicted.get(c), actual.get(c));
        }
    }

    pub fn merge(mut self, other: &Self) -> Self {
        for c in Superclass::ALL {
            let merged = self.get(c).merge(other.get(c));
            self.0.insert(c, merged);
        }
        self
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a SuperclassFlags, &'a SuperclassFlags)>) -> Self {
        let mut counts = Self::new();
        for (p, a) in pairs {
            counts.record(*p, *a);
        }
        counts
    }
}

/// Absent when the denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub sens: Option<f64>,
    pub spec: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(c: &ClassCounts) -> Metrics {
    Metrics {
        ppv: ratio(c.tp, c.tp + c.fp),
        npv: ratio(c.tn, c.tn + c.fn_),
        sens: ratio(c.tp, c.tp + c.fn_),
        spec: ratio(c.tn, c.tn + c.fp),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroValue {
    pub value: Option<f64>,
    /// Classes whose metric was defined.
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub ppv: MacroValue,
    pub npv: MacroValue,
    pub sens: MacroValue,
    pub spec: MacroValue,
}

impl AggregateMetrics {
    pub fn values(&self) -> Metrics {
        Metrics {
            ppv: self.ppv.value,
            npv: self.npv.value,
            sens: self.sens.value,
            spec: self.spec.value,
        }
    }
}

fn macro_mean(values: impl Iterator<Item = Option<f64>>) -> MacroValue {
    let present: Vec<f64> = values.flatten().collect();
    MacroValue {
        value: (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64),
        classes: present.len(),
    }
}

/// Macro average over classes, skipping undefined values.
pub fn aggregate(per_class: &[Metrics]) -> AggregateMetrics {
    AggregateMetrics {
        ppv: macro_mean(per_class.iter().map(|m| m.ppv)),
        npv: macro_mean(per_class.iter().map(|m| m.npv)),
        sens: macro_mean(per_class.iter().map(|m| m.sens)),
        spec: macro_mean(per_class.iter().map(|m| m.spec)),
    }
}

pub const AVERAGING: &str = "macro average over NORM, CD, HYP, MI, STTC; undefined per-class values skipped";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub preset: String,
    pub config: AblationConfig,
    pub backend: String,
    /// False for live remote backends, whose numbers are not reproducible.
    pub deterministic: bool,
    pub record_count: usize,
    pub parse_failures: usize,
    /// Records without any diagnostic label at or above the threshold.
    pub unlabeled_records: usize,
    pub counts: ConfusionCounts,
    pub per_class: BTreeMap<Superclass, Metrics>,
    pub aggregate: AggregateMetrics,
    pub averaging: String,
}

impl EvalReport {
    pub fn from_counts(config: &AblationConfig, backend: &str, counts: ConfusionCounts, parse_failures: usize, unlabeled: usize) -> Self {
        let per_class: BTreeMap<Superclass, Metrics> = Superclass::ALL.iter().map(|c| (*c, compute_metrics(&counts.get(*c)))).collect();
        let aggregate = aggregate(&per_class.values().copied().collect::<Vec<_>>());
        Self {
            preset: config.name.clone(),
            config: config.clone(),
            backend: backend.to_string(),
            deterministic: !backend.starts_with("remote"),
            record_count: counts.get(Superclass::Norm).total() as usize,
            parse_failures,
            unlabeled_records: unlabeled,
            counts,
            per_class,
            aggregate,
            averaging: AVERAGING.into(),
        }
    }
}

/// Audit trail of one preset x record evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordArtifact {
    pub preset: String,
    pub ecg_id: u32,
    pub prompt_hash: String,
    pub template_version: String,
    pub provenance: Vec<Provenance>,
    pub raw_response: String,
    pub parse_error: Option<String>,
    pub predictions: SuperclassFlags,
    pub labels: SuperclassFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub reports: Vec<EvalReport>,
    pub artifacts: Vec<RecordArtifact>,
}

impl AblationOutcome {
    pub fn table_rows(&self) -> Vec<TableRow> {
        self.reports.iter().map(TableRow::from_report).collect()
    }
}

/// A record ready for scoring: its analysis and reference labels.
#[derive(Debug, Clone)]
pub struct LabeledAnalysis {
    pub ecg_id: u32,
    pub analysis: Analysis,
    pub labels: SuperclassFlags,
}

/// Loads, delineates and labels `ids` in parallel; output follows `ids` order.
pub fn analyze_records(
    dataset: &PtbXl,
    ids: &[u32],
    delineator: &dyn Delineator,
    table: &RuleTable,
) -> Result<Vec<LabeledAnalysis>, EvalError> {
    ids.par_iter()
        .map(|&ecg_id| {
            let (record, _) = dataset.load(ecg_id)?;
            let labels = dataset.labeling(ecg_id)?.labels;
            let analysis = analyze(&record, delineator, table).map_err(|source| EvalError::Delineation { ecg_id, source })?;
            Ok(LabeledAnalysis {
                ecg_id,
                analysis,
                labels,
            })
        })
        .collect()
}

/// Scores every preset over pre-analysed records. Features and rules are shared
/// across presets; records run in parallel and the backend's own gate bounds
/// in-flight calls.
pub fn run_ablation(
    records: &[LabeledAnalysis],
    presets: &[AblationConfig],
    backend: &dyn ChatBackend,
    retriever: Option<&dyn Retriever>,
    opts: &PromptOptions,
) -> Result<AblationOutcome, EvalError> {
    let mut reports = Vec::with_capacity(presets.len());
    let mut artifacts = Vec::with_capacity(presets.len() * records.len());
    let unlabeled = records.iter().filter(|r| !r.labels.any()).count();
    for cfg in presets {
        let per_record: Vec<RecordArtifact> = records
            .par_iter()
            .map(|r| {
                let d = diagnose_analysis(&r.analysis, retriever, cfg, opts, backend)?;
                let predictions = d.response.predictions();
                Ok(RecordArtifact {
                    preset: cfg.name.clone(),
                    ecg_id: r.ecg_id,
                    prompt_hash: d.prompt.hash(),
                    template_version: d.prompt.template_version,
                    provenance: d.prompt.provenance,
                    raw_response: d.response.raw_text,
                    parse_error: d.response.parse_error,
                    predictions,
                    labels: r.labels,
                })
            })
            .collect::<Result<_, EvalError>>()?;
        let counts = per_record
            .iter()
            .map(|a| ConfusionCounts::from_pairs([(&a.predictions, &a.labels)]))
            .fold(ConfusionCounts::new(), |acc, c| acc.merge(&c));
        let failures = per_record.iter().filter(|a| a.parse_error.is_some()).count();
        for a in per_record.iter().filter(|a| a.parse_error.is_some()) {
            log::warn!("{} record {}: scored as all-false ({})", cfg.name, a.ecg_id, a.parse_error.as_deref().unwrap_or(""));
        }
        reports.push(EvalReport::from_counts(cfg, &backend.id(), counts, failures, unlabeled));
        artifacts.extend(per_record);
    }
    Ok(AblationOutcome { reports, artifacts })
}

fn archive_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Archive(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), EvalError> {
    fs::write(path, contents).map_err(|e| archive_err(path, e))
}

/// Writes `table.txt`, `table.csv`, one `report-<preset>.json` per preset,
/// `artifacts.jsonl` and a replayable `transcripts.jsonl` under `dir`.
pub fn write_archive(outcome: &AblationOutcome, dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(|e| archive_err(dir, e))?;
    let rows = outcome.table_rows();
    write_file(&dir.join("table.txt"), render_table_text(&rows).as_bytes())?;
    write_file(&dir.join("table.csv"), render_table_csv(&rows).as_bytes())?;
    for r in &outcome.reports {
        let path = dir.join(format!("report-{}.json", r.preset));
        let json = serde_json::to_string_pretty(r).map_err(|e| archive_err(&path, e))?;
        write_file(&path, json.as_bytes())?;
    }
    let path = dir.join("artifacts.jsonl");
    let mut lines = String::new();
    for a in &outcome.artifacts {
        lines.push_str(&serde_json::to_string(a).map_err(|e| archive_err(&path, e))?);
        lines.push('\n');
    }
    write_file(&path, lines.as_bytes())?;

    let path = dir.join("transcripts.jsonl");
    let mut file = fs::File::create(&path).map_err(|e| archive_err(&path, e))?;
    let mut seen = std::collections::HashSet::new();
    for a in outcome.artifacts.iter().filter(|a| !a.raw_response.is_empty()) {
        if !seen.insert(a.prompt_hash.clone()) {
            continue;
        }
        let entry = TranscriptEntry {
            prompt_hash: a.prompt_hash.clone(),
            raw_response: a.raw_response.clone(),
            timestamp: 0,
        };
        let line = serde_json::to_string(&entry).map_err(|e| archive_err(&path, e))?;
        writeln!(file, "{line}").map_err(|e| archive_err(&path, e))?;
    }
    Ok(())
}
