//! Five-part diagnosis prompt: features, rule results, two retrieval sections
//! and the instruction/response-format block.

mod config;

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{feature_registry, lookup, FeatureSet, LEAD_FEATURES};
use crate::knowledge::{CollectionFilter, Embedder, Hit, KnowledgeError, KnowledgeStore};
use crate::rules::{Evidence, RuleReport};
use crate::Superclass;

pub use config::{AblationConfig, AugSource, Preset, RuleQuerySource, DEFAULT_RETRIEVAL_K};

pub const SECTION_TITLES: [&str; 5] = [
    "ECG Features",
    "Rule Results",
    "Augmented Information for ECG Features",
    "Augmented Information for Rule Results",
    "Instruction & Response Format",
];

pub const NOT_MEASURABLE: &str = "not measurable";
pub const DEFAULT_CHAR_BUDGET: usize = 60_000;
const DEFAULT_TEMPLATE: &str = include_str!("../../prompts/instruction.v1.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("augmentation requested but no knowledge store is loaded")]
    StoreUnavailable,
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] KnowledgeError),
    #[error("unknown preset {0:?} (expected Base, Ablation1, Ablation2, Ablation3 or Proposed)")]
    UnknownPreset(String),
    #[error("invalid prompt config: {0}")]
    InvalidConfig(String),
    #[error("question is empty")]
    EmptyQuestion,
}

/// `### <n>. <title>`, with `index` counted from 1.
pub fn section_header(index: usize) -> String {
    format!("### {index}. {}", SECTION_TITLES[index - 1])
}

pub fn omission_marker(cfg: &AblationConfig) -> String {
    format!("(omitted under configuration {})", cfg.name)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTemplate {
    pub version: String,
    pub text: String,
}

impl Default for InstructionTemplate {
    fn default() -> Self {
        Self {
            version: "instruction.v1".into(),
            text: DEFAULT_TEMPLATE.trim_end().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub char_budget: usize,
    pub template: InstructionTemplate,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            char_budget: DEFAULT_CHAR_BUDGET,
            template: InstructionTemplate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    /// 1-based position.
    pub index: usize,
    pub title: String,
    pub body: String,
    pub omitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub section: usize,
    pub query: String,
    /// Chunks shown for this query, in rank order.
    pub chunk_ids: Vec<String>,
    /// Chunks removed by the size guard.
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub config: String,
    pub template_version: String,
    pub sections: Vec<Section>,
    pub text: String,
    pub provenance: Vec<Provenance>,
}

impl Prompt {
    /// Hex SHA-256 of the rendered text.
    pub fn hash(&self) -> String {
        prompt_hash(&self.text)
    }

    pub fn section(&self, index: usize) -> &Section {
        &self.sections[index - 1]
    }
}

pub fn prompt_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Text search over the knowledge collections.
pub trait Retriever: Sync {
    fn retrieve(&self, query: &str, filter: CollectionFilter, k: usize) -> Result<Vec<Hit>, KnowledgeError>;
}

pub struct StoreRetriever<'a> {
    pub store: &'a KnowledgeStore,
    pub embedder: &'a dyn Embedder,
}

impl Retriever for StoreRetriever<'_> {
    fn retrieve(&self, query: &str, filter: CollectionFilter, k: usize) -> Result<Vec<Hit>, KnowledgeError> {
        Ok(self.store.search(self.embedder, query, filter, k)?.hits)
    }
}

fn format_age(age: Option<f64>) -> String {
    match age {
        Some(a) => format!("{a:.0}"),
        None => "unknown".into(),
    }
}

/// Global features, one line per lead feature across the twelve leads, then age and sex.
pub fn render_features_section(features: &FeatureSet) -> String {
    let mut out = String::from("Global features:\n");
    for (d, v) in features.global.iter() {
        let value = v.map_or_else(|| NOT_MEASURABLE.to_string(), |v| d.unit.format(v));
        let _ = writeln!(out, "- {}: {value}", d.name);
    }
    out.push_str("\nLead-specific features:\n");
    for d in LEAD_FEATURES.iter() {
        let values: Vec<(&str, Option<f64>)> = features.leads().iter().map(|(l, f)| (l.as_str(), f.get(d.key))).collect();
        if values.iter().all(|(_, v)| v.is_none()) {
            let _ = writeln!(out, "- {}: {NOT_MEASURABLE}", d.name);
            continue;
        }
        let cells: Vec<String> = values
            .iter()
            .map(|(l, v)| format!("{l} {}", v.map_or_else(|| NOT_MEASURABLE.to_string(), |v| d.unit.format(v))))
            .collect();
        let _ = writeln!(out, "- {}: {}", d.name, cells.join(", "));
    }
    let _ = write!(
        out,
        "\nSubject:\n- age: {}\n- sex: {}",
        format_age(features.age),
        features.sex.as_str()
    );
    out
}

fn format_evidence(e: &Evidence) -> String {
    let value = lookup(&e.feature).map_or_else(|| format!("{} {}", e.value, e.unit), |d| d.unit.format(e.value));
    match &e.lead {
        Some(lead) => format!("{} in {lead}: {value}", e.feature),
        None => format!("{}: {value}", e.feature),
    }
}

/// One `name: True/False` line per rule, evidence under fired rules, then quality warnings.
pub fn render_rules_section(report: &RuleReport, cfg: &AblationConfig) -> String {
    if !cfg.include_rule_results {
        return omission_marker(cfg);
    }
    let mut out = String::new();
    for r in &report.rules {
        let _ = writeln!(out, "- {}: {}", r.name, if r.fired { "True" } else { "False" });
        if r.fired && !r.evidence.is_empty() {
            let cited: Vec<String> = r.evidence.iter().map(format_evidence).collect();
            let _ = writeln!(out, "  evidence: {}", cited.join("; "));
        }
    }
    if report.warnings.is_empty() {
        out.push_str("\nQuality warnings: none");
    } else {
        let _ = write!(out, "\nQuality warnings: {}", report.warnings.join("; "));
    }
    out
}

/// Capitalizes the first letter of every space-separated word, leaving the rest as is.
pub fn title_case(name: &str) -> String {
    name.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn definition_query(term: &str) -> String {
    format!("{term} is defined as")
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AugQueries {
    pub feature: Vec<String>,
    pub rule: Vec<String>,
}

/// Feature queries cover the whole registry; rule queries follow fired rules,
/// or the five superclasses when rule results are withheld.
pub fn build_aug_queries(cfg: &AblationConfig, report: &RuleReport) -> AugQueries {
    let feature = if cfg.feature_aug == AugSource::None {
        Vec::new()
    } else {
        feature_registry().iter().map(|d| definition_query(d.name)).collect()
    };
    let rule = match (cfg.rule_aug, cfg.rule_queries) {
        (AugSource::None, _) => Vec::new(),
        (_, RuleQuerySource::Superclasses) => {
            Superclass::ALL.iter().map(|c| definition_query(c.display_name())).collect()
        }
        (_, RuleQuerySource::FiredRules) => report.fired().map(|r| definition_query(&title_case(&r.name))).collect(),
    };
    AugQueries { feature, rule }
}

struct QueryResult {
    section: usize,
    query: String,
    hits: Vec<Hit>,
    dropped: Vec<String>,
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render_aug_section(results: &[QueryResult], section: usize) -> String {
    let mut out = String::new();
    for r in results.iter().filter(|r| r.section == section) {
        let _ = writeln!(out, "Query: \"{}\"", r.query);
        if r.hits.is_empty() {
            out.push_str("- (no new passages)\n");
        }
        for h in &r.hits {
            let _ = writeln!(
                out,
                "- [{} | source {} | {} | similarity {:.3}] {}",
                h.chunk.collection,
                h.chunk.source_id,
                h.chunk.id,
                h.similarity,
                one_line(&h.chunk.text)
            );
        }
    }
    out.trim_end().to_string()
}

fn render_text(sections: &[Section]) -> String {
    sections
        .iter()
        .map(|s| format!("{}\n{}", section_header(s.index), s.body))
        .collect::<Vec<_>>()
        .join("\n\n")
        + "\n"
}

fn build_sections(
    features_body: &str,
    rules_body: &str,
    results: &[QueryResult],
    cfg: &AblationConfig,
    opts: &PromptOptions,
) -> Vec<Section> {
    let aug = |source: AugSource, index: usize| {
        if source == AugSource::None {
            (omission_marker(cfg), true)
        } else {
            (render_aug_section(results, index), false)
        }
    };
    let bodies = [
        (features_body.to_string(), false),
        (rules_body.to_string(), !cfg.include_rule_results),
        aug(cfg.feature_aug, 3),
        aug(cfg.rule_aug, 4),
        (opts.template.text.clone(), false),
    ];
    bodies
        .into_iter()
        .enumerate()
        .map(|(i, (body, omitted))| Section {
            index: i + 1,
            title: SECTION_TITLES[i].to_string(),
            body,
            omitted,
        })
        .collect()
}

/// Runs the augmentation queries, de-duplicates passages by chunk id across the
/// whole prompt and enforces the character budget by dropping the least similar
/// passages first.
pub fn assemble_prompt(
    features: &FeatureSet,
    report: &RuleReport,
    retriever: Option<&dyn Retriever>,
    cfg: &AblationConfig,
    opts: &PromptOptions,
) -> Result<Prompt, PromptError> {
    cfg.validate()?;
    let queries = build_aug_queries(cfg, report);
    let mut planned: Vec<(usize, String, CollectionFilter)> = Vec::new();
    if let Some(f) = cfg.feature_aug.filter() {
        planned.extend(queries.feature.into_iter().map(|q| (3, q, f)));
    }
    if let Some(f) = cfg.rule_aug.filter() {
        planned.extend(queries.rule.into_iter().map(|q| (4, q, f)));
    }
    let hits: Vec<Vec<Hit>> = if planned.is_empty() {
        Vec::new()
    } else {
        let retriever = retriever.ok_or(PromptError::StoreUnavailable)?;
        planned
            .par_iter()
            .map(|(_, q, f)| retriever.retrieve(q, *f, cfg.retrieval_k))
            .collect::<Result<_, _>>()?
    };
    let mut seen = HashSet::new();
    let mut results: Vec<QueryResult> = planned
        .into_iter()
        .zip(hits)
        .map(|((section, query, _), hits)| QueryResult {
            section,
            query,
            hits: hits.into_iter().filter(|h| seen.insert(h.chunk.id.clone())).collect(),
            dropped: Vec::new(),
        })
        .collect();

    let features_body = render_features_section(features);
    let rules_body = render_rules_section(report, cfg);
    let mut sections = build_sections(&features_body, &rules_body, &results, cfg, opts);
    let mut text = render_text(&sections);
    while text.chars().count() > opts.char_budget {
        let victim = results
            .iter()
            .enumerate()
            .flat_map(|(qi, r)| r.hits.iter().enumerate().map(move |(hi, h)| (qi, hi, h)))
            .min_by(|a, b| a.2.similarity.total_cmp(&b.2.similarity).then_with(|| b.2.chunk.id.cmp(&a.2.chunk.id)))
            .map(|(qi, hi, _)| (qi, hi));
        let Some((qi, hi)) = victim else {
            log::warn!("prompt exceeds {} characters with every passage dropped", opts.char_budget);
            break;
        };
        let hit = results[qi].hits.remove(hi);
        results[qi].dropped.push(hit.chunk.id);
        sections = build_sections(&features_body, &rules_body, &results, cfg, opts);
        text = render_text(&sections);
    }
    let provenance = results
        .into_iter()
        .map(|r| Provenance {
            section: r.section,
            query: r.query,
            chunk_ids: r.hits.into_iter().map(|h| h.chunk.id).collect(),
            dropped: r.dropped,
        })
        .collect();
    Ok(Prompt {
        config: cfg.name.clone(),
        template_version: opts.template.version.clone(),
        sections,
        text,
        provenance,
    })
}

/// Body of section `index` in rendered prompt text, if its header is present.
pub fn section_body(text: &str, index: usize) -> Option<&str> {
    let header = section_header(index);
    let start = text.find(&header)? + header.len();
    let rest = &text[start..];
    let end = if index < SECTION_TITLES.len() {
        rest.find(&section_header(index + 1)).unwrap_or(rest.len())
    } else {
        rest.len()
    };
    Some(rest[..end].trim())
}


pub const QUESTION_TITLE: &str = "Question";

/// One earlier question/answer turn of a conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub question: String,
    pub answer: String,
}

/// The diagnosis prompt plus a sixth part carrying a free-text question, any
/// earlier exchanges and passages retrieved for the question itself.
pub fn assemble_question_prompt(
    features: &FeatureSet,
    report: &RuleReport,
    retriever: Option<&dyn Retriever>,
    cfg: &AblationConfig,
    opts: &PromptOptions,
    question: &str,
    history: &[Exchange],
) -> Result<Prompt, PromptError> {
    let question = one_line(question);
    if question.is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    let mut prompt = assemble_prompt(features, report, retriever, cfg, opts)?;
    let used: HashSet<&String> = prompt.provenance.iter().flat_map(|p| &p.chunk_ids).collect();
    let knowledge = [cfg.feature_aug, cfg.rule_aug].contains(&AugSource::DocumentsPlusKnowledge);
    let filter = if knowledge { CollectionFilter::Both } else { CollectionFilter::Documents };
    let hits: Vec<Hit> = match retriever {
        Some(r) => r
            .retrieve(&question, filter, cfg.retrieval_k)?
            .into_iter()
            .filter(|h| !used.contains(&h.chunk.id))
            .collect(),
        None => Vec::new(),
    };

    let mut body = String::new();
    if !history.is_empty() {
        body.push_str("Earlier exchanges:\n");
        for e in history {
            let _ = writeln!(body, "Q: {}\nA: {}", one_line(&e.question), one_line(&e.answer));
        }
        body.push('\n');
    }
    let result = QueryResult {
        section: 6,
        query: question.clone(),
        hits,
        dropped: Vec::new(),
    };
    body.push_str(&render_aug_section(std::slice::from_ref(&result), 6));
    let _ = write!(
        body,
        "\n\nQuestion: {question}\nAnswer in plain text, citing the ECG features, rule results and passages above. \
         This answer replaces the JSON response format requested in part 5."
    );
    prompt.text.push_str(&format!("\n### 6. {QUESTION_TITLE}\n{body}\n"));
    prompt.sections.push(Section {
        index: 6,
        title: QUESTION_TITLE.into(),
        body,
        omitted: false,
    });
    prompt.provenance.push(Provenance {
        section: 6,
        query: question,
        chunk_ids: result.hits.into_iter().map(|h| h.chunk.id).collect(),
        dropped: Vec::new(),
    });
    Ok(prompt)
}
