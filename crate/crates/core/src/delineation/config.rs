use serde::{Deserialize, Serialize};

use super::DelineationError;

pub const DEFAULT_PROFILE: &str = "classic-v1";

/// Tunables of the classic delineator. `Default` is the versioned `classic-v1` profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DelineatorConfig {
    pub profile: String,
    pub bandpass_low_hz: f64,
    pub bandpass_high_hz: f64,
    pub integration_window_ms: f64,
    pub refractory_ms: f64,
    pub refine_ms: f64,
    /// Longest walk-out from the QRS anchor in either direction.
    pub qrs_search_ms: f64,
    /// P peak window, measured back from the R peak: `[r - start, r - end]`.
    pub p_window_start_ms: f64,
    pub p_window_end_ms: f64,
    /// T peak window after the J point: `[J + min, J + min(max, rr_fraction * RR)]`.
    pub t_window_min_ms: f64,
    pub t_window_max_ms: f64,
    pub t_window_rr_fraction: f64,
    pub amplitude_floor_mv: f64,
    /// P and T waves must also reach this fraction of the lead's QRS peak-to-peak.
    pub relative_wave_floor: f64,
    pub learning_s: f64,
    /// Running-estimate weights for signal and noise peaks.
    pub signal_peak_weight: f64,
    pub noise_peak_weight: f64,
    /// THR1 = NPKI + threshold_fraction * (SPKI - NPKI); THR2 = THR1 / 2.
    pub threshold_fraction: f64,
    pub searchback_rr_factor: f64,
    pub t_wave_reject_ms: f64,
}

impl Default for DelineatorConfig {
    fn default() -> Self {
        Self {
            profile: DEFAULT_PROFILE.to_string(),
            bandpass_low_hz: 0.5,
            bandpass_high_hz: 40.0,
            integration_window_ms: 150.0,
            refractory_ms: 200.0,
            refine_ms: 50.0,
            qrs_search_ms: 150.0,
            p_window_start_ms: 300.0,
            p_window_end_ms: 80.0,
            t_window_min_ms: 80.0,
            t_window_max_ms: 600.0,
            t_window_rr_fraction: 0.6,
            amplitude_floor_mv: 0.025,
            relative_wave_floor: 0.02,
            learning_s: 2.0,
            signal_peak_weight: 0.125,
            noise_peak_weight: 0.125,
            threshold_fraction: 0.25,
            searchback_rr_factor: 1.66,
            t_wave_reject_ms: 360.0,
        }
    }
}

impl DelineatorConfig {
    pub fn validate(&self, fs: f64) -> Result<(), DelineationError> {
        let bad = |m: String| Err(DelineationError::InvalidConfig(m));
        if !(self.bandpass_low_hz > 0.0 && self.bandpass_low_hz < self.bandpass_high_hz) {
            return bad(format!(
                "band-pass {}..{} Hz is not increasing and positive",
                self.bandpass_low_hz, self.bandpass_high_hz
            ));
        }
        if self.bandpass_high_hz >= fs / 2.0 {
            return bad(format!(
                "high cutoff {} Hz is not below Nyquist ({} Hz)",
                self.bandpass_high_hz,
                fs / 2.0
            ));
        }
        let windows = [
            ("integration_window_ms", self.integration_window_ms),
            ("refractory_ms", self.refractory_ms),
            ("refine_ms", self.refine_ms),
            ("qrs_search_ms", self.qrs_search_ms),
            ("p_window_end_ms", self.p_window_end_ms),
            ("t_window_min_ms", self.t_window_min_ms),
            ("learning_s", self.learning_s),
            ("t_wave_reject_ms", self.t_wave_reject_ms),
        ];
        for (name, v) in windows {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.p_window_start_ms <= self.p_window_end_ms {
            return bad("P window start must precede its end".into());
        }
        if self.t_window_max_ms <= self.t_window_min_ms || self.t_window_rr_fraction <= 0.0 {
            return bad("T window is empty".into());
        }
        for (name, v) in [
            ("signal_peak_weight", self.signal_peak_weight),
            ("noise_peak_weight", self.noise_peak_weight),
            ("threshold_fraction", self.threshold_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.relative_wave_floor) {
            return bad(format!("relative_wave_floor must lie in [0, 1), got {}", self.relative_wave_floor));
        }
        if self.amplitude_floor_mv < 0.0 || self.searchback_rr_factor <= 1.0 {
            return bad("amplitude floor must be non-negative and searchback factor above 1".into());
        }
        Ok(())
    }

    pub(crate) fn samples(&self, ms: f64, fs: f64) -> usize {
        (ms * fs / 1000.0).round() as usize
    }
}
