use super::{median, Beat, RecordFiducials};

/// Beats in different leads within this distance are the same beat.
const MATCH_MS: f64 = 100.0;
/// Boundaries further than this from the cross-lead median are replaced by it.
const TOLERANCE_MS: f64 = 20.0;
const MIN_LEADS: usize = 3;

fn nearest(beats: &[Beat], r: usize, max: usize) -> Option<&Beat> {
    beats.iter().filter(|b| b.r_peak.abs_diff(r) <= max).min_by_key(|b| b.r_peak.abs_diff(r))
}

/// Aligns per-lead QRS boundaries that disagree with the other leads.
///
/// All leads record the same depolarization; a lead whose onset or offset
/// lies far from the median of the matching beats in other leads takes the
/// median instead, provided the beat stays ordered.
pub fn reconcile_qrs(fiducials: &RecordFiducials) -> RecordFiducials {
    let fs = fiducials.sampling_rate_hz as f64;
    let max = (MATCH_MS * fs / 1000.0).round() as usize;
    let tol = TOLERANCE_MS * fs / 1000.0;
    let mut out = fiducials.clone();
    for (li, lead) in out.leads.iter_mut().enumerate() {
        for beat in &mut lead.beats {
            let matches: Vec<&Beat> = fiducials
                .leads
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != li)
                .filter_map(|(_, other)| nearest(&other.beats, beat.r_peak, max))
                .collect();
            if matches.len() < MIN_LEADS {
                continue;
            }
            let mut on: Vec<f64> = matches.iter().filter_map(|b| b.qrs_onset).map(|v| v as f64).collect();
            let mut off: Vec<f64> = matches.iter().filter_map(|b| b.qrs_offset).map(|v| v as f64).collect();
            let mut candidate = *beat;
            if let Some(m) = median(&mut on).filter(|_| on.len() >= MIN_LEADS) {
                if beat.qrs_onset.is_none_or(|v| (v as f64 - m).abs() > tol) {
                    candidate.qrs_onset = Some(m.round() as usize);
                }
            }
            if let Some(m) = median(&mut off).filter(|_| off.len() >= MIN_LEADS) {
                if beat.qrs_offset.is_none_or(|v| (v as f64 - m).abs() > tol) {
                    candidate.qrs_offset = Some(m.round() as usize);
                }
            }
            if candidate != *beat && candidate.is_ordered() {
                *beat = candidate;
            }
        }
    }
    out
}
