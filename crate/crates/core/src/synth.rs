//! Synthetic 12-lead ECG generator with exact ground-truth fiducials.
//!
//! P and T waves are Gaussian bumps; the QRS complex is a chain of triangles
//! (q, R, S, optional R'). Wave boundaries are reported at centre ± 2σ for the
//! Gaussians, which is where the inflection-point tangent meets the baseline,
//! and at the triangle chain ends for the QRS.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ptbxl::{EcgRecord, Sex, LEAD_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude_mv: f64,
    pub sigma_ms: f64,
}

/// One triangle of the QRS chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub amplitude_mv: f64,
    pub width_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadTemplate {
    pub p: Option<Bump>,
    pub qrs: Vec<Spike>,
    /// The T-wave width follows the heart rate; only the amplitude is used.
    pub t: Option<Bump>,
    /// Offset added between the J point and T-wave peak, tapering to zero at T offset.
    pub st_shift_mv: f64,
}

impl LeadTemplate {
    pub fn qrs_width_ms(&self) -> f64 {
        self.qrs.iter().map(|s| s.width_ms).sum()
    }
}

/// Ground-truth fiducials of one generated beat (sample indices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthBeat {
    pub p_onset: Option<usize>,
    pub p_peak: Option<usize>,
    pub p_offset: Option<usize>,
    pub qrs_onset: usize,
    pub qrs_offset: usize,
    /// Apex of the largest-magnitude triangle.
    pub main_peak: usize,
    pub t_onset: Option<usize>,
    pub t_peak: Option<usize>,
    pub t_offset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rhythm {
    pub heart_rate_bpm: f64,
    /// Each RR interval is scaled by a uniform factor in `1 ± irregularity`.
    pub irregularity: f64,
    pub pr_interval_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub fs: u32,
    pub duration_s: f64,
    pub rhythm: Rhythm,
    pub leads: Vec<LeadTemplate>,
    /// Additive white noise at this SNR (dB, relative to the clean lead's power).
    pub snr_db: Option<f64>,
    pub baseline_drift_mv: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthLead {
    pub samples: Vec<f64>,
    pub beats: Vec<TruthBeat>,
}

/// Beat timing derived from heart rate: QT follows a Bazett-like relation with QTc 400 ms.
#[derive(Debug, Clone, Copy)]
struct Timing {
    pr_ms: f64,
    qt_ms: f64,
    t_sigma_ms: f64,
}

fn timing(rr_ms: f64, pr_ms: f64, qrs_ms: f64) -> Timing {
    let qt_ms = (400.0 * (rr_ms / 1000.0).sqrt()).max(qrs_ms + 150.0);
    let t_sigma_ms = ((qt_ms - qrs_ms - 40.0) / 4.0).clamp(20.0, 40.0);
    Timing {
        pr_ms,
        qt_ms,
        t_sigma_ms,
    }
}

/// Onsets of every beat (ms) for a rhythm, shared by all leads of a record.
fn beat_onsets_ms(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let rr_nominal = 60_000.0 / spec.rhythm.heart_rate_bpm;
    let total = spec.duration_s * 1000.0;
    let mut out = Vec::new();
    let mut t = spec.rhythm.pr_interval_ms + 60.0 + rng.random_range(0.0..rr_nominal * 0.3);
    loop {
        let irr = spec.rhythm.irregularity;
        let rr = rr_nominal * (1.0 + if irr > 0.0 { rng.random_range(-irr..irr) } else { 0.0 });
        if t >= total {
            break;
        }
        out.push((t, rr));
        t += rr;
    }
    out
}

fn to_index(ms: f64, fs: f64) -> usize {
    (ms * fs / 1000.0).round().max(0.0) as usize
}

/// Generates every lead of `spec` on a shared beat schedule.
pub fn generate(spec: &SynthSpec) -> Vec<SynthLead> {
    let fs = f64::from(spec.fs);
    let n = (spec.duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let onsets = beat_onsets_ms(spec, &mut rng);
    let drift_phase = rng.random_range(0.0..std::f64::consts::TAU);

    spec.leads
        .iter()
        .map(|tpl| {
            let mut x = vec![0.0; n];
            let mut beats = Vec::new();
            let qrs_ms = tpl.qrs_width_ms();
            for &(onset, rr) in &onsets {
                let tm = timing(rr, spec.rhythm.pr_interval_ms, qrs_ms);
                let j_ms = onset + qrs_ms;
                let t_center = onset + tm.qt_ms - 2.0 * tm.t_sigma_ms;
                let t_end = onset + tm.qt_ms;
                let p_start = onset - tm.pr_ms;
                if p_start < 0.0 || to_index(t_end, fs) + 1 >= n {
                    continue;
                }

                let mut truth = TruthBeat {
                    p_onset: None,
                    p_peak: None,
                    p_offset: None,
                    qrs_onset: to_index(onset, fs),
                    qrs_offset: to_index(j_ms, fs),
                    main_peak: 0,
                    t_onset: None,
                    t_peak: None,
                    t_offset: None,
                };

                if let Some(p) = tpl.p {
                    let c = p_start + 2.0 * p.sigma_ms;
                    add_gaussian(&mut x, fs, c, p.sigma_ms, p.amplitude_mv);
                    truth.p_onset = Some(to_index(p_start, fs));
                    truth.p_peak = Some(to_index(c, fs));
                    truth.p_offset = Some(to_index(c + 2.0 * p.sigma_ms, fs));
                }

                let mut cursor = onset;
                let mut prev_level = 0.0;
                let mut best = (0.0f64, onset);
                for (k, s) in tpl.qrs.iter().enumerate() {
                    let apex = cursor + s.width_ms / 2.0;
                    let end_level = if k + 1 == tpl.qrs.len() { tpl.st_shift_mv } else { 0.0 };
                    add_triangle(&mut x, fs, cursor, s.width_ms, prev_level, s.amplitude_mv, end_level);
                    if s.amplitude_mv.abs() > best.0.abs() {
                        best = (s.amplitude_mv, apex);
                    }
                    prev_level = end_level;
                    cursor += s.width_ms;
                }
                truth.main_peak = to_index(best.1, fs);

                if tpl.st_shift_mv != 0.0 {
                    // Plateau from J to T peak, then linear return to baseline at T offset.
                    let (a, b, c) = (to_index(j_ms, fs), to_index(t_center, fs), to_index(t_end, fs));
                    for (i, v) in x.iter_mut().enumerate().take(c).skip(a) {
                        *v += if i < b {
                            tpl.st_shift_mv
                        } else {
                            tpl.st_shift_mv * (c - i) as f64 / (c - b).max(1) as f64
                        };
                    }
                }

                if let Some(t) = tpl.t {
                    let sigma = tm.t_sigma_ms;
                    add_gaussian(&mut x, fs, t_center, sigma, t.amplitude_mv);
                    truth.t_onset = Some(to_index(t_center - 2.0 * sigma, fs));
                    truth.t_peak = Some(to_index(t_center, fs));
                    truth.t_offset = Some(to_index(t_end, fs));
                }
                beats.push(truth);
            }

            if let Some(snr) = spec.snr_db {
                let power = x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
                let sd = (power / 10f64.powf(snr / 10.0)).sqrt();
                if sd > 0.0 {
                    let normal = Normal::new(0.0, sd).expect("finite sd");
                    for v in x.iter_mut() {
                        *v += normal.sample(&mut rng);
                    }
                }
            }
            if spec.baseline_drift_mv != 0.0 {
                for (i, v) in x.iter_mut().enumerate() {
                    let t = i as f64 / fs;
                    *v += spec.baseline_drift_mv
                        * (std::f64::consts::TAU * 0.15 * t + drift_phase).sin();
                }
            }
            SynthLead { samples: x, beats }
        })
        .collect()
}

fn add_gaussian(x: &mut [f64], fs: f64, center_ms: f64, sigma_ms: f64, amp: f64) {
    let lo = to_index(center_ms - 5.0 * sigma_ms, fs);
    let hi = to_index(center_ms + 5.0 * sigma_ms, fs).min(x.len());
    for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
        let t = i as f64 * 1000.0 / fs;
        let z = (t - center_ms) / sigma_ms;
        *v += amp * (-0.5 * z * z).exp();
    }
}

/// Piecewise-linear segment start_level -> apex -> end_level over `width_ms`.
fn add_triangle(
    x: &mut [f64],
    fs: f64,
    start_ms: f64,
    width_ms: f64,
    start_level: f64,
    apex: f64,
    end_level: f64,
) {
    let mid = start_ms + width_ms / 2.0;
    let end = start_ms + width_ms;
    let lo = (start_ms * fs / 1000.0).ceil() as usize;
    let hi = ((end * fs / 1000.0).ceil() as usize).min(x.len());
    for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
        let t = i as f64 * 1000.0 / fs;
        *v += if t <= mid {
            start_level + (apex - start_level) * (t - start_ms) / (mid - start_ms)
        } else {
            apex + (end_level - apex) * (t - mid) / (end - mid)
        };
    }
}

/// Named morphologies used by fixtures and the bundled mini-corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Morphology {
    Normal,
    Rbbb,
    /// Non-specific intraventricular delay, QRS 113 ms.
    Ivcd113,
    Lvh,
    InferiorMi,
    StDepression,
    AtrialFibrillation,
}

// Hexaxial lead angles (degrees) for I, II, III, aVR, aVL, aVF.
const LIMB_ANGLES: [f64; 6] = [0.0, 60.0, 120.0, -150.0, -30.0, 90.0];
const PRECORDIAL_R: [f64; 6] = [0.2, 0.4, 0.7, 1.1, 1.3, 1.1];
const PRECORDIAL_S: [f64; 6] = [-0.9, -1.2, -0.9, -0.5, -0.25, -0.15];
const PRECORDIAL_T: [f64; 6] = [0.1, 0.3, 0.45, 0.45, 0.35, 0.25];

/// Builds 12 lead templates for a morphology from a frontal QRS axis.
pub fn twelve_lead_templates(morphology: Morphology, qrs_axis_deg: f64) -> Vec<LeadTemplate> {
    let p_axis = 60.0f64;
    let t_axis = 45.0f64;
    let proj = |axis: f64, lead: f64| (axis - lead).to_radians().cos();
    let wide = matches!(morphology, Morphology::Rbbb);
    let ivcd = matches!(morphology, Morphology::Ivcd113);

    let mut leads = Vec::with_capacity(12);
    for (i, _) in LEAD_NAMES.iter().enumerate() {
        let (r_amp, s_amp, p_amp, t_amp, q_amp) = if i < 6 {
            let k = proj(qrs_axis_deg, LIMB_ANGLES[i]);
            (
                0.15 + 1.2 * k.max(0.0),
                -(0.15 + 1.2 * (-k).max(0.0)),
                0.15 * proj(p_axis, LIMB_ANGLES[i]),
                0.3 * proj(t_axis, LIMB_ANGLES[i]),
                if k > 0.5 { -0.08 } else { 0.0 },
            )
        } else {
            let v = i - 6;
            (
                PRECORDIAL_R[v],
                PRECORDIAL_S[v],
                0.08,
                PRECORDIAL_T[v],
                if v >= 4 { -0.08 } else { 0.0 },
            )
        };
        let (q_w, r_w, s_w) = if ivcd { (18.0, 50.0, 45.0) } else { (14.0, 40.0, 36.0) };
        let mut qrs = Vec::new();
        if q_amp != 0.0 {
            qrs.push(Spike { amplitude_mv: q_amp, width_ms: q_w });
        }
        qrs.push(Spike { amplitude_mv: r_amp, width_ms: r_w });
        qrs.push(Spike { amplitude_mv: s_amp, width_ms: s_w });
        // Every lead spans the same QRS interval.
        if q_amp == 0.0 {
            qrs[0].width_ms += q_w;
        }
        if wide {
            // rsR' in V1/V2, slurred S elsewhere; total width 130 ms.
            if i == 6 || i == 7 {
                qrs = vec![
                    Spike { amplitude_mv: 0.3, width_ms: 30.0 },
                    Spike { amplitude_mv: -0.5, width_ms: 40.0 },
                    Spike { amplitude_mv: 0.9, width_ms: 60.0 },
                ];
            } else {
                let fixed: f64 = qrs[..qrs.len() - 1].iter().map(|s| s.width_ms).sum();
                let last = qrs.len() - 1;
                qrs[last].width_ms = 130.0 - fixed;
                if qrs[last].amplitude_mv.abs() < 0.3 {
                    qrs[last].amplitude_mv = -0.35;
                }
            }
        }
        let mut tpl = LeadTemplate {
            p: Some(Bump { amplitude_mv: p_amp, sigma_ms: 20.0 }),
            qrs,
            t: Some(Bump { amplitude_mv: t_amp, sigma_ms: 40.0 }),
            st_shift_mv: 0.0,
        };
        match morphology {
            Morphology::Lvh => {
                if i == 6 || i == 7 {
                    tpl.qrs.last_mut().unwrap().amplitude_mv = -2.2;
                }
                if i == 10 || i == 11 {
                    tpl.qrs.iter_mut().find(|s| s.amplitude_mv > 0.0).unwrap().amplitude_mv = 2.6;
                }
            }
            Morphology::InferiorMi if matches!(i, 1 | 2 | 5) => {
                tpl.qrs.retain(|s| s.amplitude_mv > 0.0 || s.width_ms > 20.0);
                tpl.qrs.insert(0, Spike { amplitude_mv: -0.45, width_ms: 44.0 });
                if let Some(r) = tpl.qrs.iter_mut().find(|s| s.amplitude_mv > 0.0) {
                    r.amplitude_mv = r.amplitude_mv.max(0.5);
                    r.width_ms = 30.0;
                }
                tpl.qrs.last_mut().unwrap().width_ms = 24.0;
            }
            Morphology::StDepression if matches!(i, 0 | 1 | 9 | 10 | 11) => {
                tpl.st_shift_mv = -0.15;
                tpl.t = Some(Bump { amplitude_mv: -0.25, sigma_ms: 40.0 });
            }
            Morphology::AtrialFibrillation => tpl.p = None,
            _ => {}
        }
        leads.push(tpl);
    }
    leads
}

/// Generates a full record and its per-lead ground truth.
pub fn generate_record(ecg_id: u32, spec: &SynthSpec, age: Option<f64>, sex: Sex) -> (EcgRecord, Vec<SynthLead>) {
    assert_eq!(spec.leads.len(), 12, "a record needs 12 lead templates");
    let leads = generate(spec);
    let signal = leads.iter().map(|l| l.samples.clone()).collect();
    let record = EcgRecord::new(ecg_id, signal, spec.fs, age, sex).expect("generator output is a valid record");
    (record, leads)
}

/// Convenience spec: one morphology at a heart rate.
pub fn scenario(morphology: Morphology, heart_rate_bpm: f64, fs: u32, seed: u64) -> SynthSpec {
    let irregular = morphology == Morphology::AtrialFibrillation;
    SynthSpec {
        fs,
        duration_s: 10.0,
        rhythm: Rhythm {
            heart_rate_bpm,
            irregularity: if irregular { 0.3 } else { 0.0 },
            pr_interval_ms: 160.0,
        },
        leads: twelve_lead_templates(morphology, 60.0),
        snr_db: None,
        baseline_drift_mv: 0.0,
        seed,
    }
}

/// A single clean lead with a textbook P-QRS-T template.
pub fn single_lead(heart_rate_bpm: f64, fs: u32, with_p: bool, seed: u64) -> SynthSpec {
    let tpl = LeadTemplate {
        p: with_p.then_some(Bump { amplitude_mv: 0.15, sigma_ms: 20.0 }),
        qrs: vec![
            Spike { amplitude_mv: -0.1, width_ms: 14.0 },
            Spike { amplitude_mv: 1.4, width_ms: 40.0 },
            Spike { amplitude_mv: -0.3, width_ms: 36.0 },
        ],
        t: Some(Bump { amplitude_mv: 0.35, sigma_ms: 40.0 }),
        st_shift_mv: 0.0,
    };
    SynthSpec {
        fs,
        duration_s: 10.0,
        rhythm: Rhythm {
            heart_rate_bpm,
            irregularity: 0.0,
            pr_interval_ms: 160.0,
        },
        leads: vec![tpl],
        snr_db: None,
        baseline_drift_mv: 0.0,
        seed,
    }
}
