use std::collections::HashMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::superclass::{Superclass, SuperclassFlags};

/// Likelihood at or above which a diagnostic statement sets its superclass.
pub const LIKELIHOOD_THRESHOLD: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatementKind {
    Diagnostic,
    Form,
    Rhythm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementEntry {
    pub code: String,
    pub description: String,
    pub kind: StatementKind,
    pub diagnostic_class: Option<Superclass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScpAnnotation {
    pub code: String,
    pub likelihood: f64,
    pub kind: StatementKind,
    pub diagnostic_class: Option<Superclass>,
}

/// SCP statement dictionary (`scp_statements.csv`).
#[derive(Debug, Clone, Default)]
pub struct StatementDictionary {
    entries: HashMap<String, StatementEntry>,
}

fn flag(v: Option<&str>) -> bool {
    v.and_then(|s| s.trim().parse::<f64>().ok())
        .is_some_and(|x| x != 0.0)
}

impl StatementDictionary {
    pub fn from_entries(entries: impl IntoIterator<Item = StatementEntry>) -> Self {
        Self {
            entries: entries.into_iter().map(|e| (e.code.clone(), e)).collect(),
        }
    }

    /// Reads the PTB-XL statement table. The first (unnamed) column holds the code;
    /// the superclass comes from the `diagnostic_class` column.
    pub fn from_csv(reader: impl Read) -> Result<Self, IngestError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (diag, form, rhythm) = (col("diagnostic"), col("form"), col("rhythm"));
        let class_col = col("diagnostic_class");
        let desc_col = col("description");
        if diag.is_none() || class_col.is_none() {
            return Err(IngestError::Metadata(
                "statement dictionary needs diagnostic and diagnostic_class columns".into(),
            ));
        }

        let mut entries = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let code = row.get(0).unwrap_or_default().trim().to_string();
            if code.is_empty() {
                continue;
            }
            let get = |c: Option<usize>| c.and_then(|i| row.get(i));
            let kind = if flag(get(diag)) {
                StatementKind::Diagnostic
            } else if flag(get(form)) {
                StatementKind::Form
            } else if flag(get(rhythm)) {
                StatementKind::Rhythm
            } else {
                return Err(IngestError::Metadata(format!(
                    "statement {code} has no diagnostic/form/rhythm flag"
                )));
            };
            let class_text = get(class_col).unwrap_or_default().trim();
            let diagnostic_class = if class_text.is_empty() {
                None
            } else {
                Some(class_text.parse::<Superclass>().map_err(|e| {
                    IngestError::Metadata(format!("statement {code}: {e}"))
                })?)
            };
            if kind == StatementKind::Diagnostic && diagnostic_class.is_none() {
                return Err(IngestError::Metadata(format!(
                    "diagnostic statement {code} has no diagnostic class"
                )));
            }
            entries.push(StatementEntry {
                description: get(desc_col).unwrap_or_default().to_string(),
                code,
                kind,
                diagnostic_class,
            });
        }
        Ok(Self::from_entries(entries))
    }

    pub fn get(&self, code: &str) -> Option<&StatementEntry> {
        self.entries.get(code)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn annotate(&self, code: &str, likelihood: f64) -> Result<ScpAnnotation, IngestError> {
        let entry = self
            .get(code)
            .ok_or_else(|| IngestError::UnknownCode(code.to_string()))?;
        if !(0.0..=100.0).contains(&likelihood) {
            return Err(IngestError::Metadata(format!(
                "likelihood {likelihood} for {code} outside 0..=100"
            )));
        }
        Ok(ScpAnnotation {
            code: code.to_string(),
            likelihood,
            kind: entry.kind,
            diagnostic_class: entry.diagnostic_class,
        })
    }
}

/// Outcome of labelling one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labeling {
    pub labels: SuperclassFlags,
    pub annotations: Vec<ScpAnnotation>,
    /// Codes missing from the dictionary or otherwise unusable; excluded from labelling.
    pub warnings: Vec<String>,
}

/// A superclass is set iff at least one diagnostic statement mapped to it has
/// likelihood >= 50. Form and rhythm statements never contribute.
pub fn derive_labels(codes: &[(String, f64)], dictionary: &StatementDictionary) -> Labeling {
    let mut labels = SuperclassFlags::NONE;
    let mut annotations = Vec::with_capacity(codes.len());
    let mut warnings = Vec::new();
    for (code, likelihood) in codes {
        match dictionary.annotate(code, *likelihood) {
            Ok(a) => {
                if a.kind == StatementKind::Diagnostic && a.likelihood >= LIKELIHOOD_THRESHOLD {
                    if let Some(class) = a.diagnostic_class {
                        labels.set(class, true);
                    }
                }
                annotations.push(a);
            }
            Err(e) => warnings.push(e.to_string()),
        }
    }
    Labeling {
        labels,
        annotations,
        warnings,
    }
}

/// Parses PTB-XL's stringified code map, e.g. `{'IMI': 100.0, 'SR': 0.0}`.
/// Both quote styles are accepted; order is preserved.
pub fn parse_scp_codes(text: &str) -> Result<Vec<(String, f64)>, IngestError> {
    let err = |why: &str| IngestError::Metadata(format!("scp_codes {text:?}: {why}"));
    let body = text
        .trim()
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(|| err("expected a {...} map"))?;
    let mut out = Vec::new();
    for item in body.split(',') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let (key, value) = item.split_once(':').ok_or_else(|| err("missing ':'"))?;
        let key = key.trim();
        let unquoted = key
            .strip_prefix('\'')
            .and_then(|k| k.strip_suffix('\''))
            .or_else(|| key.strip_prefix('"').and_then(|k| k.strip_suffix('"')))
            .ok_or_else(|| err("unquoted key"))?;
        let value: f64 = value.trim().parse().map_err(|_| err("bad likelihood"))?;
        out.push((unquoted.to_string(), value));
    }
    Ok(out)
}
