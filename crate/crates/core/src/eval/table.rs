use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalReport, Metrics};
use crate::prompt::{AblationConfig, AugSource, RuleQuerySource};

pub const ABSENT: &str = "—";

/// One row of the configuration comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub framework: String,
    pub rule_results: bool,
    pub feature_aug: String,
    pub rule_aug: String,
    pub metrics: Metrics,
}

fn aug_label(source: AugSource) -> &'static str {
    match source {
        AugSource::None => "None",
        AugSource::DocumentsOnly => "Documents only",
        AugSource::DocumentsPlusKnowledge => "Documents + Knowledge",
    }
}

impl TableRow {
    pub fn from_config(cfg: &AblationConfig, metrics: Metrics) -> Self {
        let mut rule_aug = aug_label(cfg.rule_aug).to_string();
        if cfg.rule_aug != AugSource::None && cfg.rule_queries == RuleQuerySource::Superclasses {
            rule_aug.push('*');
        }
        Self {
            framework: cfg.name.clone(),
            rule_results: cfg.include_rule_results,
            feature_aug: aug_label(cfg.feature_aug).into(),
            rule_aug,
            metrics,
        }
    }

    pub fn from_report(report: &EvalReport) -> Self {
        Self::from_config(&report.config, report.aggregate.values())
    }

    fn cells(&self) -> [String; 8] {
        let m = &self.metrics;
        [
            self.framework.clone(),
            if self.rule_results { "○" } else { "×" }.into(),
            self.feature_aug.clone(),
            self.rule_aug.clone(),
            fmt_metric(m.ppv),
            fmt_metric(m.npv),
            fmt_metric(m.sens),
            fmt_metric(m.spec),
        ]
    }
}

pub fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| ABSENT.to_string(), |v| format!("{v:.3}"))
}

const HEADER: [&str; 8] = ["Framework", "Rule Results", "Aug. ECG Features", "Aug. Rule Results", "PPV", "NPV", "Sens.", "Spec."];

/// Fixed-width text table with a footnote for superclass-driven rule queries.
pub fn render_table_text(rows: &[TableRow]) -> String {
    let cells: Vec<[String; 8]> = rows.iter().map(TableRow::cells).collect();
    let widths: Vec<usize> = (0..8)
        .map(|i| cells.iter().map(|r| r[i].chars().count()).chain([HEADER[i].chars().count()]).max().unwrap_or(0))
        .collect();
    let line = |row: &[String]| {
        row.iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let header: Vec<String> = HEADER.iter().map(|s| s.to_string()).collect();
    let mut out = line(&header) + "\n";
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    out.push('\n');
    for r in &cells {
        out.push_str(&line(r));
        out.push('\n');
    }
    if rows.iter().any(|r| r.rule_aug.ends_with('*')) {
        out.push_str("* No rule results; rule-side retrieval queries the five superclass names.\n");
    }
    let _ = writeln!(out, "Metrics: {}; {ABSENT} marks an undefined value.", super::AVERAGING);
    out
}

pub fn render_table_csv(rows: &[TableRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["framework", "rule_results", "aug_ecg_features", "aug_rule_results", "ppv", "npv", "sens", "spec"])
        .expect("in-memory write");
    for r in rows {
        w.write_record(r.cells()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}
