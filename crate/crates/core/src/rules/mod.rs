//! Declarative diagnostic rules over a [`FeatureSet`] and their projection onto
//! the five superclasses.
//!
//! The rule file format and expression grammar are described in `docs/rules.md`.

mod expr;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureSet;
use crate::superclass::{Superclass, SuperclassFlags};

pub use expr::{parse as parse_expr, Expr, ExprError, FeatureRef, Truth, LIMB_LEADS, PRECORDIAL_LEADS};

/// Number of rules every table must contain.
pub const RULE_COUNT: usize = 40;

/// The rule table shipped with the crate.
pub const DEFAULT_RULES: &str = include_str!("../../rules/default.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("rule {rule}: {path}: {message}")]
    Schema { rule: String, path: String, message: String },
    #[error("rule {rule}: unknown feature {feature:?} in {path}")]
    UnknownFeatureReference { rule: String, path: String, feature: String },
}

/// How a rule takes part in the NORM decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Required for NORM (sinus rhythm).
    Normal,
    /// Any firing vetoes NORM.
    #[default]
    Finding,
    /// Signal-quality notice; never vetoes NORM.
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub id: String,
    pub name: String,
    pub role: Role,
    pub superclass: Option<Superclass>,
    pub source: String,
    pub condition: Expr,
    pub evidence: Vec<FeatureRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleTable {
    pub version: String,
    rules: Vec<Rule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    version: Option<String>,
    #[serde(default)]
    rule: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    id: Option<String>,
    name: Option<String>,
    #[serde(default)]
    role: Role,
    superclass: Option<String>,
    when: Option<String>,
    evidence: Option<Vec<String>>,
}

fn evidence_ref(rule: &str, path: &str, text: &str) -> Result<FeatureRef, RuleError> {
    let wrap = |e: ExprError| match e {
        ExprError::UnknownFeature(f) => RuleError::UnknownFeatureReference {
            rule: rule.to_string(),
            path: path.to_string(),
            feature: f,
        },
        other => RuleError::Schema {
            rule: rule.to_string(),
            path: path.to_string(),
            message: other.to_string(),
        },
    };
    // An evidence entry is a bare reference, checked as `present(<ref>)`.
    match parse_expr(&format!("present({text})")).map_err(wrap)? {
        Expr::Present(r) => Ok(r),
        _ => Err(RuleError::Schema {
            rule: rule.to_string(),
            path: path.to_string(),
            message: format!("{text:?} is not a feature reference"),
        }),
    }
}

impl RuleTable {
    /// Parses and validates a TOML rule table.
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let raw: RawTable = toml::from_str(text).map_err(|e| RuleError::Schema {
            rule: "<table>".into(),
            path: e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "<root>".into()),
            message: e.message().to_string(),
        })?;
        let version = raw.version.ok_or_else(|| RuleError::Schema {
            rule: "<table>".into(),
            path: "version".into(),
            message: "missing table version".into(),
        })?;
        let mut seen = HashSet::new();
        let mut rules = Vec::with_capacity(raw.rule.len());
        for (i, r) in raw.rule.into_iter().enumerate() {
            let schema = |rule: &str, field: &str, message: String| RuleError::Schema {
                rule: rule.to_string(),
                path: format!("rule[{i}].{field}"),
                message,
            };
            let id = r.id.filter(|s| !s.trim().is_empty()).ok_or_else(|| schema(&format!("#{i}"), "id", "missing id".into()))?;
            if !seen.insert(id.clone()) {
                return Err(schema(&id, "id", format!("duplicate id {id:?}")));
            }
            let name = r.name.filter(|s| !s.trim().is_empty()).ok_or_else(|| schema(&id, "name", "missing name".into()))?;
            let superclass = match r.superclass {
                Some(s) => Some(s.parse::<Superclass>().map_err(|e| schema(&id, "superclass", e.to_string()))?),
                None => None,
            };
            if superclass == Some(Superclass::Norm) {
                return Err(schema(&id, "superclass", "NORM is derived, not assigned".into()));
            }
            if r.role != Role::Finding && superclass.is_some() {
                return Err(schema(&id, "superclass", "only findings map to a superclass".into()));
            }
            let source = r.when.ok_or_else(|| schema(&id, "when", "missing condition".into()))?;
            let condition = parse_expr(&source).map_err(|e| match e {
                ExprError::UnknownFeature(f) => RuleError::UnknownFeatureReference {
                    rule: id.clone(),
                    path: format!("rule[{i}].when"),
                    feature: f,
                },
                other => schema(&id, "when", other.to_string()),
            })?;
            let evidence = match r.evidence {
                Some(list) => list
                    .iter()
                    .enumerate()
                    .map(|(j, e)| evidence_ref(&id, &format!("rule[{i}].evidence[{j}]"), e))
                    .collect::<Result<Vec<_>, _>>()?,
                None => condition.references(),
            };
            if evidence.iter().any(|e| e.lead.is_none() && e.feature.scope == crate::features::FeatureScope::Lead) {
                return Err(schema(&id, "evidence", "lead features in evidence need a lead".into()));
            }
            rules.push(Rule {
                id,
                name,
                role: r.role,
                superclass,
                source,
                condition,
                evidence,
            });
        }
        if rules.len() != RULE_COUNT {
            return Err(RuleError::Schema {
                rule: "<table>".into(),
                path: "rule".into(),
                message: format!("expected {RULE_COUNT} rules, found {}", rules.len()),
            });
        }
        if !rules.iter().any(|r| r.role == Role::Normal) {
            return Err(RuleError::Schema {
                rule: "<table>".into(),
                path: "rule".into(),
                message: "no rule has role \"normal\"".into(),
            });
        }
        Ok(Self { version, rules })
    }

    /// The shipped table.
    pub fn default_table() -> Self {
        Self::parse(DEFAULT_RULES).expect("shipped rule table is valid")
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub feature: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lead: Option<String>,
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub id: String,
    pub name: String,
    pub role: Role,
    pub superclass: Option<Superclass>,
    pub fired: bool,
    /// Cited feature values; filled for fired rules only.
    pub evidence: Vec<Evidence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub rules: Vec<RuleOutcome>,
    pub superclasses: SuperclassFlags,
    /// Names of fired warning rules.
    pub warnings: Vec<String>,
}

impl RuleReport {
    pub fn fired(&self) -> impl Iterator<Item = &RuleOutcome> {
        self.rules.iter().filter(|r| r.fired)
    }

    pub fn outcome(&self, id: &str) -> Option<&RuleOutcome> {
        self.rules.iter().find(|r| r.id == id)
    }
}

/// Evaluates every rule; absent inputs make a rule not fire.
pub fn evaluate_rules(features: &FeatureSet, table: &RuleTable) -> RuleReport {
    let rules: Vec<RuleOutcome> = table
        .rules
        .iter()
        .map(|rule| {
            let fired = rule.condition.eval(features).is_true();
            let evidence = if fired {
                rule.evidence
                    .iter()
                    .filter_map(|r| {
                        let value = features.value(r.feature.key, r.lead.as_deref())?;
                        Some(Evidence {
                            feature: r.feature.name.to_string(),
                            lead: r.lead.clone(),
                            value,
                            unit: r.feature.unit.symbol().to_string(),
                        })
                    })
                    .collect()
            } else {
                Vec::new()
            };
            RuleOutcome {
                id: rule.id.clone(),
                name: rule.name.clone(),
                role: rule.role,
                superclass: rule.superclass,
                fired,
                evidence,
            }
        })
        .collect();
    let warnings = rules.iter().filter(|r| r.fired && r.role == Role::Warning).map(|r| r.name.clone()).collect();
    let mut report = RuleReport {
        rules,
        superclasses: SuperclassFlags::NONE,
        warnings,
    };
    report.superclasses = project_superclasses(&report);
    report
}

/// CD/HYP/MI/STTC are the OR of their fired rules. NORM requires a fired
/// normal-role rule and no fired finding.
pub fn project_superclasses(report: &RuleReport) -> SuperclassFlags {
    let mut flags = SuperclassFlags::NONE;
    for r in report.fired() {
        if let Some(c) = r.superclass {
            flags.set(c, true);
        }
    }
    let normal = report.fired().any(|r| r.role == Role::Normal);
    let vetoed = report.fired().any(|r| r.role == Role::Finding);
    flags.set(Superclass::Norm, normal && !vetoed);
    flags
}
