//! Lead-specific and global ECG features over a fixed, named registry.
//!
//! Absent values stay absent (`None`) all the way to the prompt, where they are
//! rendered as "not measurable".

mod global;
mod lead;
mod registry;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::delineation::{reconcile_qrs, RecordFiducials};
use crate::ptbxl::{EcgRecord, Sex, LEAD_NAMES};

pub use global::{extract_global_features, frontal_axis, qtc_bazett, qtc_fridericia, rhythm_lead, rr_intervals_ms};
pub use lead::extract_lead_features;
pub use registry::{feature_registry, lookup, FeatureDescriptor, FeatureScope, Unit, GLOBAL_FEATURES, LEAD_FEATURES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("unknown lead {0:?}")]
    UnknownLead(String),
    #[error("lead {0} missing from feature set")]
    MissingLead(String),
    #[error("feature {name:?} has unit {found:?}, expected {expected:?}")]
    UnitMismatch {
        name: String,
        expected: String,
        found: String,
    },
}

macro_rules! feature_table {
    ($ty:ident, $table:ident, $index:path) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct $ty {
            values: [Option<f64>; $table.len()],
        }

        impl $ty {
            pub fn absent() -> Self {
                Self {
                    values: [None; $table.len()],
                }
            }

            /// Value by registry key. Unregistered keys read as absent.
            pub fn get(&self, key: &str) -> Option<f64> {
                $index(key).and_then(|i| self.values[i])
            }

            /// Sets by registry key; non-finite values become absent.
            ///
            /// # Panics
            /// On an unregistered key.
            pub fn set(&mut self, key: &str, value: Option<f64>) {
                let i = $index(key).unwrap_or_else(|| panic!("unregistered feature {key}"));
                self.values[i] = value.filter(|v| v.is_finite());
            }

            pub fn iter(&self) -> impl Iterator<Item = (&'static FeatureDescriptor, Option<f64>)> + '_ {
                $table.iter().zip(self.values.iter().copied())
            }

            pub fn present_count(&self) -> usize {
                self.values.iter().filter(|v| v.is_some()).count()
            }
        }

        impl Default for $ty {
            fn default() -> Self {
                Self::absent()
            }
        }
    };
}

feature_table!(LeadFeatures, LEAD_FEATURES, registry::lead_index);
feature_table!(GlobalFeatures, GLOBAL_FEATURES, registry::global_index);

/// Features of one record: 12 leads in standard order, globals and demographics.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub ecg_id: u32,
    leads: Vec<(String, LeadFeatures)>,
    pub global: GlobalFeatures,
    pub age: Option<f64>,
    pub sex: Sex,
}

impl FeatureSet {
    /// A feature set with every value absent.
    pub fn absent(ecg_id: u32) -> Self {
        Self {
            ecg_id,
            leads: LEAD_NAMES.iter().map(|n| (n.to_string(), LeadFeatures::absent())).collect(),
            global: GlobalFeatures::absent(),
            age: None,
            sex: Sex::Unknown,
        }
    }

    pub fn leads(&self) -> &[(String, LeadFeatures)] {
        &self.leads
    }

    pub fn lead(&self, name: &str) -> Option<&LeadFeatures> {
        self.leads.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn lead_mut(&mut self, name: &str) -> Option<&mut LeadFeatures> {
        self.leads.iter_mut().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    /// Global value, or a lead value when `lead` is given.
    pub fn value(&self, key: &str, lead: Option<&str>) -> Option<f64> {
        match lead {
            Some(l) => self.lead(l)?.get(key),
            None => self.global.get(key),
        }
    }
}

/// Lead and global features of a delineated record, after cross-lead QRS
/// reconciliation.
pub fn extract_features(record: &EcgRecord, fiducials: &RecordFiducials) -> FeatureSet {
    let fs = record.fs();
    let fiducials = &reconcile_qrs(fiducials);
    let leads: Vec<(String, LeadFeatures)> = LEAD_NAMES
        .par_iter()
        .map(|&name| {
            let f = match (fiducials.lead(name), record.lead_by_name(name)) {
                (Some(fid), Some(x)) => extract_lead_features(fid, x, fs),
                _ => LeadFeatures::absent(),
            };
            (name.to_string(), f)
        })
        .collect();
    let global = extract_global_features(fiducials, &leads);
    FeatureSet {
        ecg_id: record.ecg_id,
        leads,
        global,
        age: record.age,
        sex: record.sex,
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    value: Option<f64>,
    unit: String,
}

struct Table(Vec<(&'static FeatureDescriptor, Option<f64>)>);

impl Serialize for Table {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (d, v) in &self.0 {
            map.serialize_entry(
                d.name,
                &Entry {
                    value: *v,
                    unit: d.unit.symbol().to_string(),
                },
            )?;
        }
        map.end()
    }
}

struct Leads<'a>(&'a [(String, LeadFeatures)]);

impl Serialize for Leads<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (name, f) in self.0 {
            map.serialize_entry(name, &Table(f.iter().collect()))?;
        }
        map.end()
    }
}

#[derive(Serialize, Deserialize)]
struct Demographics {
    age: Option<f64>,
    sex: Sex,
}

impl Serialize for FeatureSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(4))?;
        map.serialize_entry("ecg_id", &self.ecg_id)?;
        map.serialize_entry("global", &Table(self.global.iter().collect()))?;
        map.serialize_entry("leads", &Leads(&self.leads))?;
        map.serialize_entry(
            "demographics",
            &Demographics {
                age: self.age,
                sex: self.sex,
            },
        )?;
        map.end()
    }
}

#[derive(Deserialize)]
struct RawFeatureSet {
    ecg_id: u32,
    global: BTreeMap<String, Entry>,
    leads: BTreeMap<String, BTreeMap<String, Entry>>,
    demographics: Demographics,
}

fn fill(table: &[FeatureDescriptor], raw: BTreeMap<String, Entry>, set: &mut dyn FnMut(&str, Option<f64>)) -> Result<(), FeatureError> {
    for (name, entry) in raw {
        let d = table
            .iter()
            .find(|d| d.name == name || d.key == name)
            .ok_or_else(|| FeatureError::UnknownFeature(name.clone()))?;
        if entry.unit != d.unit.symbol() {
            return Err(FeatureError::UnitMismatch {
                name,
                expected: d.unit.symbol().to_string(),
                found: entry.unit,
            });
        }
        set(d.key, entry.value);
    }
    Ok(())
}

impl TryFrom<RawFeatureSet> for FeatureSet {
    type Error = FeatureError;

    fn try_from(mut raw: RawFeatureSet) -> Result<Self, FeatureError> {
        if let Some(extra) = raw.leads.keys().find(|k| !LEAD_NAMES.contains(&k.as_str())) {
            return Err(FeatureError::UnknownLead(extra.clone()));
        }
        let mut fs = FeatureSet::absent(raw.ecg_id);
        fs.age = raw.demographics.age;
        fs.sex = raw.demographics.sex;
        fill(&GLOBAL_FEATURES, raw.global, &mut |k, v| fs.global.set(k, v))?;
        for name in LEAD_NAMES {
            let entries = raw.leads.remove(name).ok_or_else(|| FeatureError::MissingLead(name.to_string()))?;
            let lead = fs.lead_mut(name).expect("all standard leads present");
            fill(&LEAD_FEATURES, entries, &mut |k, v| lead.set(k, v))?;
        }
        Ok(fs)
    }
}

impl<'de> Deserialize<'de> for FeatureSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawFeatureSet::deserialize(d)?;
        FeatureSet::try_from(raw).map_err(D::Error::custom)
    }
}
