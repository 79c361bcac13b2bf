use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureScope {
    Lead,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "µV")]
    Microvolt,
    #[serde(rename = "ms")]
    Millisecond,
    #[serde(rename = "µV·ms")]
    MicrovoltMs,
    #[serde(rename = "µV/ms")]
    MicrovoltPerMs,
    #[serde(rename = "count")]
    Count,
    #[serde(rename = "flag")]
    Flag,
    #[serde(rename = "ratio")]
    Ratio,
    #[serde(rename = "score")]
    Score,
    #[serde(rename = "bpm")]
    Bpm,
    #[serde(rename = "°")]
    Degree,
    #[serde(rename = "fraction")]
    Fraction,
}

impl Unit {
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Microvolt => "µV",
            Unit::Millisecond => "ms",
            Unit::MicrovoltMs => "µV·ms",
            Unit::MicrovoltPerMs => "µV/ms",
            Unit::Count => "count",
            Unit::Flag => "flag",
            Unit::Ratio => "ratio",
            Unit::Score => "score",
            Unit::Bpm => "bpm",
            Unit::Degree => "°",
            Unit::Fraction => "fraction",
        }
    }

    /// Amplitude-like units scale with the signal; everything else is scale-free.
    pub fn scales_with_amplitude(self) -> bool {
        matches!(self, Unit::Microvolt | Unit::MicrovoltMs | Unit::MicrovoltPerMs)
    }

    /// Renders a value with its unit, e.g. `60 bpm`, `113 ms`, `0.42`.
    pub fn format(self, v: f64) -> String {
        match self {
            Unit::Flag => if v != 0.0 { "yes".into() } else { "no".into() },
            Unit::Count => format!("{v:.0}"),
            Unit::Ratio | Unit::Score | Unit::Fraction => format!("{v:.2}"),
            Unit::Degree => format!("{v:.0}°"),
            _ => format!("{v:.0} {}", self.symbol()),
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FeatureDescriptor {
    /// Stable identifier used in rule expressions and JSON.
    pub key: &'static str,
    /// Human-readable name; also the stem of retrieval queries.
    pub name: &'static str,
    pub scope: FeatureScope,
    pub unit: Unit,
    pub definition: &'static str,
}

const fn lead(key: &'static str, name: &'static str, unit: Unit, definition: &'static str) -> FeatureDescriptor {
    FeatureDescriptor {
        key,
        name,
        scope: FeatureScope::Lead,
        unit,
        definition,
    }
}

const fn global(key: &'static str, name: &'static str, unit: Unit, definition: &'static str) -> FeatureDescriptor {
    FeatureDescriptor {
        key,
        name,
        scope: FeatureScope::Global,
        unit,
        definition,
    }
}

use Unit::*;

pub const LEAD_FEATURES: [FeatureDescriptor; 30] = [
    lead("p_amplitude", "P amplitude", Microvolt, "P-wave peak relative to the isoelectric level before the QRS"),
    lead("p_duration", "P duration", Millisecond, "P-wave onset to P-wave offset"),
    lead("p_area", "P area", MicrovoltMs, "signed area of the P wave above the isoelectric level"),
    lead("pr_interval", "PR interval", Millisecond, "P-wave onset to QRS onset"),
    lead("pr_segment", "PR segment", Millisecond, "P-wave offset to QRS onset"),
    lead("q_amplitude", "Q amplitude", Microvolt, "depth of the initial negative QRS deflection"),
    lead("q_duration", "Q duration", Millisecond, "QRS onset to the return of the Q wave to baseline"),
    lead("pathological_q", "pathological-Q flag", Flag, "Q wave lasting at least 40 ms or deeper than 25% of the R wave"),
    lead("r_amplitude", "R amplitude", Microvolt, "height of the first positive QRS deflection"),
    lead("r_duration", "R duration", Millisecond, "width of the R wave at the isoelectric level"),
    lead("s_amplitude", "S amplitude", Microvolt, "depth of the negative deflection following the R wave"),
    lead("s_duration", "S duration", Millisecond, "width of the S wave at the isoelectric level"),
    lead("r_prime_amplitude", "R' amplitude", Microvolt, "height of a second positive deflection after the S wave"),
    lead("qrs_duration", "QRS duration", Millisecond, "QRS onset to J point"),
    lead("qrs_net_area", "QRS net area", MicrovoltMs, "signed area of the QRS complex"),
    lead("qrs_positive_peak", "QRS positive peak", Microvolt, "largest positive excursion inside the QRS"),
    lead("qrs_negative_peak", "QRS negative peak", Microvolt, "largest negative excursion inside the QRS"),
    lead("rs_ratio", "R/S ratio", Ratio, "R amplitude divided by the absolute S amplitude"),
    lead("intrinsicoid_deflection", "intrinsicoid deflection time", Millisecond, "QRS onset to the R peak"),
    lead("fragmented_qrs_notches", "fragmented-QRS notch count", Count, "extra direction changes inside the QRS beyond its main waves"),
    lead("st_level_j", "ST level at J", Microvolt, "signal level at the J point relative to the isoelectric level"),
    lead("st_level_j60", "ST level at J+60 ms", Microvolt, "signal level 60 ms after the J point relative to the isoelectric level"),
    lead("st_slope", "ST slope", MicrovoltPerMs, "change of the ST level from J to J+60 ms per millisecond"),
    lead("t_amplitude", "T amplitude", Microvolt, "T-wave peak relative to the isoelectric level"),
    lead("t_duration", "T duration", Millisecond, "T-wave onset to T-wave offset"),
    lead("t_area", "T area", MicrovoltMs, "signed area of the T wave above the isoelectric level"),
    lead("t_r_ratio", "T/R ratio", Ratio, "T amplitude divided by R amplitude"),
    lead("qt_interval", "QT interval", Millisecond, "QRS onset to T-wave offset"),
    lead("jt_interval", "JT interval", Millisecond, "J point to T-wave offset"),
    lead("signal_quality", "signal-quality index", Score, "composite of flat-line, clipping and high-frequency noise; 1 is clean"),
];

pub const GLOBAL_FEATURES: [FeatureDescriptor; 12] = [
    global("heart_rate", "heart rate", Bpm, "60000 divided by the median RR interval"),
    global("rr_interval", "RR interval", Millisecond, "median interval between successive R peaks"),
    global("sdnn", "SDNN", Millisecond, "standard deviation of RR intervals"),
    global("rr_irregularity", "RR irregularity", Fraction, "share of successive RR changes larger than 10% of the median RR"),
    global("global_pr_interval", "global PR interval", Millisecond, "median PR interval across leads"),
    global("global_qrs_duration", "global QRS duration", Millisecond, "median QRS duration across leads"),
    global("global_qt_interval", "global QT interval", Millisecond, "median QT interval across leads"),
    global("qtc_bazett", "QTc Bazett", Millisecond, "QT divided by the square root of RR in seconds"),
    global("qtc_fridericia", "QTc Fridericia", Millisecond, "QT divided by the cube root of RR in seconds"),
    global("p_axis", "P axis", Degree, "frontal P-wave axis from P areas in leads I and aVF"),
    global("qrs_axis", "QRS axis", Degree, "frontal QRS axis from net QRS areas in leads I and aVF"),
    global("t_axis", "T axis", Degree, "frontal T-wave axis from T areas in leads I and aVF"),
];

/// All 42 descriptors: lead scope first, then global, in fixed order.
pub fn feature_registry() -> Vec<&'static FeatureDescriptor> {
    LEAD_FEATURES.iter().chain(GLOBAL_FEATURES.iter()).collect()
}

/// Resolves a key or display name (case-insensitive).
pub fn lookup(name: &str) -> Option<&'static FeatureDescriptor> {
    LEAD_FEATURES
        .iter()
        .chain(GLOBAL_FEATURES.iter())
        .find(|d| d.key.eq_ignore_ascii_case(name) || d.name.eq_ignore_ascii_case(name))
}

pub(crate) fn lead_index(key: &str) -> Option<usize> {
    LEAD_FEATURES.iter().position(|d| d.key == key)
}

pub(crate) fn global_index(key: &str) -> Option<usize> {
    GLOBAL_FEATURES.iter().position(|d| d.key == key)
}
