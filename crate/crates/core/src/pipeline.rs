//! Record -> fiducials -> features -> rules, and the prompt/diagnosis step on top.

use serde::{Deserialize, Serialize};

use crate::delineation::{DelineationError, Delineator, RecordFiducials};
use crate::features::{extract_features, FeatureSet};
use crate::llm::{diagnose, ChatBackend, DiagnosisResponse};
use crate::prompt::{assemble_prompt, AblationConfig, Prompt, PromptError, PromptOptions, Retriever};
use crate::ptbxl::EcgRecord;
use crate::rules::{evaluate_rules, RuleReport, RuleTable};

/// Everything derived from a record before retrieval; shared by all presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub fiducials: RecordFiducials,
    pub features: FeatureSet,
    pub report: RuleReport,
}

pub fn analyze(record: &EcgRecord, delineator: &dyn Delineator, table: &RuleTable) -> Result<Analysis, DelineationError> {
    let fiducials = delineator.delineate(record)?;
    let features = extract_features(record, &fiducials);
    let report = evaluate_rules(&features, table);
    Ok(Analysis {
        fiducials,
        features,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub prompt: Prompt,
    pub response: DiagnosisResponse,
}

/// Builds the prompt for `cfg` and sends it to `backend`. Backend and parse
/// failures are carried inside the response; only prompt assembly can fail.
pub fn diagnose_analysis(
    analysis: &Analysis,
    retriever: Option<&dyn Retriever>,
    cfg: &AblationConfig,
    opts: &PromptOptions,
    backend: &dyn ChatBackend,
) -> Result<Diagnosis, PromptError> {
    let prompt = assemble_prompt(&analysis.features, &analysis.report, retriever, cfg, opts)?;
    let response = diagnose(backend, &prompt.text);
    Ok(Diagnosis { prompt, response })
}
