use crate::filter::Cascade;

/// Sample-to-sample change below which a lead counts as not moving (mV).
const FLAT_EPS: f64 = 1e-3;
/// Shortest still stretch counted as a flat line.
const FLAT_MIN_S: f64 = 2.0;
/// Shortest run pinned at the lead extreme counted as clipping.
const CLIP_MIN_S: f64 = 0.01;
const HF_CUTOFF_HZ: f64 = 35.0;
/// High-frequency energy ratio at which the noise factor halves.
const HF_HALF: f64 = 0.1;

/// Fraction of samples inside still stretches of at least `FLAT_MIN_S`.
fn flat_fraction(x: &[f64], fs: f64) -> f64 {
    let min_run = ((FLAT_MIN_S * fs) as usize).max(2);
    let mut flat = 0usize;
    let mut run = 1usize;
    for i in 1..=x.len() {
        if i < x.len() && (x[i] - x[i - 1]).abs() < FLAT_EPS {
            run += 1;
        } else {
            if run >= min_run {
                flat += run;
            }
            run = 1;
        }
    }
    flat as f64 / x.len() as f64
}

/// Fraction of samples pinned at the lead's maximum or minimum in runs.
fn clip_fraction(x: &[f64], fs: f64) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if hi - lo < FLAT_EPS {
        // A still lead is scored by the flat-line term.
        return 0.0;
    }
    let min_run = ((CLIP_MIN_S * fs) as usize).max(3);
    let pinned = |v: f64| (v - hi).abs() < FLAT_EPS * 0.5 || (v - lo).abs() < FLAT_EPS * 0.5;
    let mut clipped = 0usize;
    let mut run = 0usize;
    for v in x.iter().copied().chain(std::iter::once(f64::NAN)) {
        if v.is_finite() && pinned(v) {
            run += 1;
        } else {
            if run >= min_run {
                clipped += run;
            }
            run = 0;
        }
    }
    clipped as f64 / x.len() as f64
}

/// Energy above `HF_CUTOFF_HZ` relative to the energy of the mean-removed lead.
fn hf_ratio(x: &[f64], fs: f64) -> f64 {
    let cutoff = HF_CUTOFF_HZ.min(0.4 * fs);
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let total: f64 = centered.iter().map(|v| v * v).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let low = Cascade::new(vec![crate::filter::Biquad::lowpass(cutoff, fs)]).filtfilt(&centered, (fs * 0.5) as usize);
    let hf: f64 = centered.iter().zip(&low).map(|(a, b)| (a - b) * (a - b)).sum();
    hf / total
}

/// Signal quality in [0, 1]; 1 is clean. Product of the non-flat share, the
/// non-clipped share and a high-frequency noise factor.
pub fn quality_score(lead: &[f64], fs: f64) -> f64 {
    if lead.is_empty() || lead.iter().any(|v| !v.is_finite()) {
        return 0.0;
    }
    let r = hf_ratio(lead, fs) / HF_HALF;
    let score = (1.0 - flat_fraction(lead, fs)) * (1.0 - clip_fraction(lead, fs)) / (1.0 + r * r);
    score.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn flat_lead_scores_low() {
        assert!(quality_score(&vec![0.0; 5000], 500.0) <= 0.1);
    }

    #[test]
    fn clean_beats_score_high() {
        for hr in [45.0, 70.0, 140.0] {
            let lead = &synth::generate(&synth::single_lead(hr, 500, true, 3))[0];
            let q = quality_score(&lead.samples, 500.0);
            assert!(q >= 0.9, "hr {hr}: {q}");
        }
    }

    #[test]
    fn zero_db_noise_scores_low() {
        let mut spec = synth::single_lead(70.0, 500, true, 4);
        spec.snr_db = Some(0.0);
        let lead = &synth::generate(&spec)[0];
        let q = quality_score(&lead.samples, 500.0);
        assert!(q <= 0.5, "{q}");
    }

    #[test]
    fn clipping_detected() {
        let lead = &synth::generate(&synth::single_lead(70.0, 500, true, 5))[0];
        let clipped: Vec<f64> = lead.samples.iter().map(|v| v.clamp(-0.05, 0.05)).collect();
        assert!(clip_fraction(&clipped, 500.0) > 0.05);
        assert!(quality_score(&clipped, 500.0) < quality_score(&lead.samples, 500.0));
    }
}
