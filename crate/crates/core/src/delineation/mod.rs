//! Per-lead, per-beat fiducial points.
//!
//! [`ClassicDelineator`] chains band-pass conditioning, an energy-based QRS
//! detector, slope walk-out for QRS boundaries and tangent intersection for
//! P/T boundaries. Anything implementing [`Delineator`] can replace it.

mod config;
mod qrs;
mod quality;
mod reconcile;
mod waves;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::Cascade;
use crate::ptbxl::EcgRecord;

pub use config::{DelineatorConfig, DEFAULT_PROFILE};
pub use qrs::detect_qrs;
pub use quality::quality_score;
pub use reconcile::reconcile_qrs;
pub use waves::{beat_baseline, delineate_waves, qrs_lobes, redelineate, Lobe};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DelineationError {
    #[error("lead has {samples} samples, at least {required} needed")]
    TooShort { samples: usize, required: usize },
    #[error("invalid delineator config: {0}")]
    InvalidConfig(String),
}

/// Fiducial sample indices of one beat. Everything except the R peak may be absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Beat {
    pub p_onset: Option<usize>,
    pub p_peak: Option<usize>,
    pub p_offset: Option<usize>,
    pub qrs_onset: Option<usize>,
    pub q_peak: Option<usize>,
    pub r_peak: usize,
    pub s_peak: Option<usize>,
    /// J point.
    pub qrs_offset: Option<usize>,
    pub t_onset: Option<usize>,
    pub t_peak: Option<usize>,
    pub t_offset: Option<usize>,
}

impl Beat {
    pub fn anchored(r_peak: usize) -> Self {
        Self {
            r_peak,
            ..Self::default()
        }
    }

    /// Present indices in canonical order, paired with the relation that must hold
    /// to the next one (`true` = strict).
    fn chain(&self) -> Vec<(usize, bool)> {
        let steps = [
            (self.p_onset, true),
            (self.p_peak, true),
            (self.p_offset, false),
            (self.qrs_onset, true),
            (Some(self.r_peak), true),
            (self.qrs_offset, false),
            (self.t_onset, true),
            (self.t_peak, true),
            (self.t_offset, true),
        ];
        steps.iter().filter_map(|(v, s)| v.map(|v| (v, *s))).collect()
    }

    pub fn is_ordered(&self) -> bool {
        let c = self.chain();
        let chain_ok = c.windows(2).all(|w| {
            let ((a, strict), (b, _)) = (w[0], w[1]);
            if strict { a < b } else { a <= b }
        });
        let q_ok = match (self.q_peak, self.qrs_onset) {
            (Some(q), Some(on)) => on <= q && q < self.r_peak,
            (Some(q), None) => q < self.r_peak,
            _ => true,
        };
        let s_ok = match (self.s_peak, self.qrs_offset) {
            (Some(s), Some(off)) => self.r_peak < s && s <= off,
            (Some(s), None) => self.r_peak < s,
            _ => true,
        };
        chain_ok && q_ok && s_ok
    }

    pub fn max_index(&self) -> usize {
        self.chain().last().map(|c| c.0).unwrap_or(self.r_peak).max(self.s_peak.unwrap_or(0))
    }

    /// Every present index shifted by `k`.
    pub fn shifted(&self, k: isize) -> Self {
        let f = |v: usize| (v as isize + k) as usize;
        let o = |v: Option<usize>| v.map(f);
        Self {
            p_onset: o(self.p_onset),
            p_peak: o(self.p_peak),
            p_offset: o(self.p_offset),
            qrs_onset: o(self.qrs_onset),
            q_peak: o(self.q_peak),
            r_peak: f(self.r_peak),
            s_peak: o(self.s_peak),
            qrs_offset: o(self.qrs_offset),
            t_onset: o(self.t_onset),
            t_peak: o(self.t_peak),
            t_offset: o(self.t_offset),
        }
    }
}

/// Delineation of a single lead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiducialSet {
    pub lead: String,
    pub beats: Vec<Beat>,
    pub quality: f64,
}

impl FiducialSet {
    pub fn r_peaks(&self) -> Vec<usize> {
        self.beats.iter().map(|b| b.r_peak).collect()
    }

    /// Checks ordering, spacing and range invariants; returns the first violation.
    pub fn check_invariants(&self, n_samples: usize, fs: f64) -> Result<(), String> {
        let min_gap = (0.2 * fs).floor() as usize;
        for (i, b) in self.beats.iter().enumerate() {
            if !b.is_ordered() {
                return Err(format!("{}: beat {i} out of order: {b:?}", self.lead));
            }
            if b.max_index() >= n_samples {
                return Err(format!("{}: beat {i} exceeds {n_samples} samples", self.lead));
            }
        }
        for (i, w) in self.beats.windows(2).enumerate() {
            if w[1].r_peak < w[0].r_peak + min_gap {
                return Err(format!(
                    "{}: r peaks {} and {} closer than 200 ms",
                    self.lead,
                    i,
                    i + 1
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.quality) {
            return Err(format!("{}: quality {} outside [0, 1]", self.lead, self.quality));
        }
        Ok(())
    }
}

/// Delineation of all twelve leads of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFiducials {
    pub ecg_id: u32,
    pub sampling_rate_hz: u32,
    pub n_samples: usize,
    pub profile: String,
    pub leads: Vec<FiducialSet>,
}

impl RecordFiducials {
    pub fn lead(&self, name: &str) -> Option<&FiducialSet> {
        self.leads.iter().find(|l| l.lead.eq_ignore_ascii_case(name))
    }
}

pub trait Delineator: Send + Sync {
    fn delineate(&self, record: &EcgRecord) -> Result<RecordFiducials, DelineationError>;
}

/// Zero-phase band-pass conditioning.
pub fn preprocess(lead: &[f64], fs: f64, cfg: &DelineatorConfig) -> Result<Vec<f64>, DelineationError> {
    cfg.validate(fs)?;
    let required = (2.0 * fs).ceil() as usize;
    if lead.len() < required {
        return Err(DelineationError::TooShort {
            samples: lead.len(),
            required,
        });
    }
    let cascade = Cascade::bandpass(cfg.bandpass_low_hz, cfg.bandpass_high_hz, fs);
    // Long enough for the high-pass transient to settle.
    let pad = (3.0 * fs / cfg.bandpass_low_hz) as usize;
    Ok(cascade.filtfilt(lead, pad))
}

#[derive(Debug, Clone, Default)]
pub struct ClassicDelineator {
    pub config: DelineatorConfig,
}

impl ClassicDelineator {
    pub fn new(config: DelineatorConfig) -> Self {
        Self { config }
    }

    pub fn delineate_lead(&self, name: &str, lead: &[f64], fs: f64) -> Result<FiducialSet, DelineationError> {
        self.delineate_lead_filtered(name, lead, fs).map(|(set, _)| set)
    }

    fn delineate_lead_filtered(&self, name: &str, lead: &[f64], fs: f64) -> Result<(FiducialSet, Vec<f64>), DelineationError> {
        let filtered = preprocess(lead, fs, &self.config)?;
        let r_peaks = detect_qrs(&filtered, fs, &self.config);
        let mut set = delineate_waves(&filtered, fs, &r_peaks, &self.config);
        set.lead = name.to_string();
        set.quality = quality_score(lead, fs);
        Ok((set, filtered))
    }
}

fn qrs_only(b: &Beat) -> Beat {
    Beat {
        p_onset: None,
        p_peak: None,
        p_offset: None,
        t_onset: None,
        t_peak: None,
        t_offset: None,
        ..*b
    }
}

impl Delineator for ClassicDelineator {
    /// Per-lead delineation, then QRS bounds are agreed across leads and leads
    /// whose bounds moved are delineated again from those bounds.
    fn delineate(&self, record: &EcgRecord) -> Result<RecordFiducials, DelineationError> {
        let fs = record.fs();
        let (leads, filtered): (Vec<_>, Vec<_>) = record
            .signal()
            .par_iter()
            .zip(record.lead_names().par_iter())
            .map(|(x, name)| self.delineate_lead_filtered(name, x, fs))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .unzip();
        let mut fids = RecordFiducials {
            ecg_id: record.ecg_id,
            sampling_rate_hz: record.sampling_rate_hz(),
            n_samples: record.n_samples(),
            profile: self.config.profile.clone(),
            leads,
        };
        let mut stripped = fids.clone();
        for lead in &mut stripped.leads {
            lead.beats.iter_mut().for_each(|b| *b = qrs_only(b));
        }
        let agreed = reconcile_qrs(&stripped);
        fids.leads
            .par_iter_mut()
            .zip(agreed.leads.par_iter().zip(stripped.leads.par_iter()))
            .zip(filtered.par_iter())
            .for_each(|((lead, (agreed, before)), x)| {
                if agreed.beats != before.beats {
                    lead.beats = redelineate(x, fs, &agreed.beats, &self.config);
                }
            });
        Ok(fids)
    }
}

/// Median of a slice; `None` when empty. NaNs are not expected.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    Some(if values.len() % 2 == 0 {
        (values[m - 1] + values[m]) / 2.0
    } else {
        values[m]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn sine(freq: f64, amp: f64, fs: f64, secs: f64) -> Vec<f64> {
        (0..(fs * secs) as usize)
            .map(|i| amp * (TAU * freq * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn slow_drift_is_removed() {
        let fs = 500.0;
        let x = sine(0.1, 1.0, fs, 10.0);
        let y = preprocess(&x, fs, &DelineatorConfig::default()).unwrap();
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak < 0.1, "residual {peak}");
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!(mean.abs() < 0.05);
    }

    #[test]
    fn passband_amplitude_preserved() {
        let fs = 500.0;
        let x = sine(10.0, 1.0, fs, 10.0);
        let y = preprocess(&x, fs, &DelineatorConfig::default()).unwrap();
        // Ignore the edges; measure the steady-state peak.
        let peak = y[1000..4000].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 0.1, "peak {peak}");
    }

    #[test]
    fn zero_in_zero_out() {
        let y = preprocess(&vec![0.0; 1000], 500.0, &DelineatorConfig::default()).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn short_lead_rejected() {
        let err = preprocess(&vec![0.0; 999], 500.0, &DelineatorConfig::default()).unwrap_err();
        assert_eq!(err, DelineationError::TooShort { samples: 999, required: 1000 });
    }

    #[test]
    fn config_validation() {
        let mut cfg = DelineatorConfig::default();
        assert!(cfg.validate(500.0).is_ok());
        assert!(cfg.validate(60.0).is_err());
        cfg.bandpass_low_hz = 50.0;
        assert!(cfg.validate(500.0).is_err());
    }

    #[test]
    fn ordering_check() {
        let mut b = Beat::anchored(100);
        b.qrs_onset = Some(90);
        b.qrs_offset = Some(120);
        b.t_onset = Some(120);
        assert!(b.is_ordered());
        b.t_onset = Some(119);
        assert!(!b.is_ordered());
    }
}
