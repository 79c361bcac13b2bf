use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::knowledge::CollectionFilter;

use super::PromptError;

/// Where augmented passages for one prompt section come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugSource {
    None,
    DocumentsOnly,
    DocumentsPlusKnowledge,
}

impl AugSource {
    pub fn filter(self) -> Option<CollectionFilter> {
        match self {
            Self::None => None,
            Self::DocumentsOnly => Some(CollectionFilter::Documents),
            Self::DocumentsPlusKnowledge => Some(CollectionFilter::Both),
        }
    }
}

/// What the rule-augmentation queries are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleQuerySource {
    /// Names of rules that fired.
    FiredRules,
    /// The five superclass display names, used when rule results are withheld.
    Superclasses,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub name: String,
    pub include_rule_results: bool,
    pub feature_aug: AugSource,
    pub rule_aug: AugSource,
    pub rule_queries: RuleQuerySource,
    pub retrieval_k: usize,
}

pub const DEFAULT_RETRIEVAL_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preset {
    Base,
    Ablation1,
    Ablation2,
    Ablation3,
    Proposed,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Base, Preset::Ablation1, Preset::Ablation2, Preset::Ablation3, Preset::Proposed];

    pub fn name(self) -> &'static str {
        match self {
            Self::Base => "Base",
            Self::Ablation1 => "Ablation1",
            Self::Ablation2 => "Ablation2",
            Self::Ablation3 => "Ablation3",
            Self::Proposed => "Proposed",
        }
    }

    pub fn config(self) -> AblationConfig {
        use AugSource::{DocumentsOnly as Docs, DocumentsPlusKnowledge as Both};
        let (include_rule_results, feature_aug, rule_aug) = match self {
            Self::Base => (false, Docs, Docs),
            Self::Ablation1 => (true, Docs, Docs),
            Self::Ablation2 => (true, Both, Docs),
            Self::Ablation3 => (true, Docs, Both),
            Self::Proposed => (true, Both, Both),
        };
        AblationConfig {
            name: self.name().to_string(),
            include_rule_results,
            feature_aug,
            rule_aug,
            rule_queries: if include_rule_results {
                RuleQuerySource::FiredRules
            } else {
                RuleQuerySource::Superclasses
            },
            retrieval_k: DEFAULT_RETRIEVAL_K,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| PromptError::UnknownPreset(s.to_string()))
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.retrieval_k == 0 {
            return Err(PromptError::InvalidConfig("retrieval_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn needs_store(&self) -> bool {
        self.feature_aug != AugSource::None || self.rule_aug != AugSource::None
    }
}
