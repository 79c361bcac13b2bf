//! Hand-built feature sets with known rule outcomes.

use crate::features::FeatureSet;
use crate::ptbxl::LEAD_NAMES;

/// Plain sinus rhythm; fires only the sinus-rhythm rule.
pub fn normal_features(ecg_id: u32) -> FeatureSet {
    let mut fs = FeatureSet::absent(ecg_id);
    for (k, v) in [
        ("heart_rate", 72.0),
        ("rr_interval", 833.0),
        ("sdnn", 20.0),
        ("rr_irregularity", 0.0),
        ("global_pr_interval", 160.0),
        ("global_qrs_duration", 90.0),
        ("global_qt_interval", 380.0),
        ("qtc_bazett", 416.0),
        ("qtc_fridericia", 404.0),
        ("p_axis", 60.0),
        ("qrs_axis", 60.0),
        ("t_axis", 45.0),
    ] {
        fs.global.set(k, Some(v));
    }
    for lead in LEAD_NAMES {
        let lf = fs.lead_mut(lead).expect("standard lead");
        for (k, v) in [
            ("p_amplitude", 120.0),
            ("p_duration", 90.0),
            ("pr_interval", 160.0),
            ("qrs_duration", 90.0),
            ("r_amplitude", 900.0),
            ("s_amplitude", 300.0),
            ("qrs_positive_peak", 900.0),
            ("qrs_negative_peak", -300.0),
            ("qrs_net_area", 15000.0),
            ("intrinsicoid_deflection", 35.0),
            ("pathological_q", 0.0),
            ("fragmented_qrs_notches", 0.0),
            ("st_level_j", 10.0),
            ("st_level_j60", 20.0),
            ("st_slope", 0.2),
            ("t_amplitude", 250.0),
            ("signal_quality", 0.98),
        ] {
            lf.set(k, Some(v));
        }
    }
    fs
}

/// Sinus rhythm with a global QRS duration of 113 ms: a nonspecific
/// intraventricular conduction delay and nothing else.
pub fn cd_features(ecg_id: u32) -> FeatureSet {
    let mut fs = normal_features(ecg_id);
    fs.global.set("global_qrs_duration", Some(113.0));
    fs
}
