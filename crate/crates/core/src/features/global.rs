use crate::delineation::{median, FiducialSet, RecordFiducials};

use super::{GlobalFeatures, LeadFeatures};

/// RR changes above this share of the median count as irregular.
const IRREGULAR_STEP: f64 = 0.1;

/// Lead used for rhythm: II when it has two beats, otherwise the best-quality lead that does.
pub fn rhythm_lead(fiducials: &RecordFiducials) -> Option<&FiducialSet> {
    fiducials
        .lead("II")
        .filter(|f| f.beats.len() >= 2)
        .or_else(|| {
            fiducials
                .leads
                .iter()
                .filter(|f| f.beats.len() >= 2)
                .max_by(|a, b| a.quality.total_cmp(&b.quality))
        })
}

pub fn rr_intervals_ms(r_peaks: &[usize], fs: f64) -> Vec<f64> {
    r_peaks.windows(2).map(|w| (w[1] as f64 - w[0] as f64) * 1000.0 / fs).collect()
}

pub fn qtc_bazett(qt_ms: f64, rr_ms: f64) -> f64 {
    qt_ms / (rr_ms / 1000.0).sqrt()
}

pub fn qtc_fridericia(qt_ms: f64, rr_ms: f64) -> f64 {
    qt_ms / (rr_ms / 1000.0).cbrt()
}

/// Frontal-plane axis in degrees, in (-180, 180].
pub fn frontal_axis(lead_i: f64, lead_avf: f64) -> Option<f64> {
    if lead_i == 0.0 && lead_avf == 0.0 {
        return None;
    }
    let deg = lead_avf.atan2(lead_i).to_degrees();
    Some(if deg <= -180.0 { deg + 360.0 } else { deg })
}

fn across_leads(leads: &[(String, LeadFeatures)], key: &str) -> Option<f64> {
    let mut vals: Vec<f64> = leads.iter().filter_map(|(_, f)| f.get(key)).collect();
    median(&mut vals)
}

fn axis(leads: &[(String, LeadFeatures)], key: &str) -> Option<f64> {
    let find = |name: &str| leads.iter().find(|(n, _)| n == name).and_then(|(_, f)| f.get(key));
    frontal_axis(find("I")?, find("aVF")?)
}

/// Computes the 12 global features. Rate-derived features are absent when no
/// lead has two beats.
pub fn extract_global_features(fiducials: &RecordFiducials, leads: &[(String, LeadFeatures)]) -> GlobalFeatures {
    let mut g = GlobalFeatures::absent();
    let fs = fiducials.sampling_rate_hz as f64;
    let rr = rhythm_lead(fiducials).map(|f| rr_intervals_ms(&f.r_peaks(), fs)).unwrap_or_default();
    let median_rr = median(&mut rr.clone());
    if let Some(m) = median_rr {
        g.set("rr_interval", Some(m));
        g.set("heart_rate", Some(60000.0 / m));
        let mean = rr.iter().sum::<f64>() / rr.len() as f64;
        let var = rr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rr.len() as f64;
        g.set("sdnn", Some(var.sqrt()));
        if rr.len() >= 2 {
            let steps = rr.windows(2).filter(|w| (w[1] - w[0]).abs() > IRREGULAR_STEP * m).count();
            g.set("rr_irregularity", Some(steps as f64 / (rr.len() - 1) as f64));
        }
    }
    g.set("global_pr_interval", across_leads(leads, "pr_interval"));
    g.set("global_qrs_duration", across_leads(leads, "qrs_duration"));
    let qt = across_leads(leads, "qt_interval");
    g.set("global_qt_interval", qt);
    if let (Some(qt), Some(rr)) = (qt, median_rr) {
        g.set("qtc_bazett", Some(qtc_bazett(qt, rr)));
        g.set("qtc_fridericia", Some(qtc_fridericia(qt, rr)));
    }
    g.set("p_axis", axis(leads, "p_area"));
    g.set("qrs_axis", axis(leads, "qrs_net_area"));
    g.set("t_axis", axis(leads, "t_area"));
    g
}
