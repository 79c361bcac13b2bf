use crate::delineation::{beat_baseline, median, qrs_lobes, Beat, FiducialSet, Lobe};

use super::registry::{lead_index, LEAD_FEATURES};
use super::LeadFeatures;

/// Lobes smaller than this share of the QRS peak-to-peak are not separate waves.
const LOBE_FRACTION: f64 = 0.05;
const ST_OFFSET_MS: f64 = 60.0;
/// Half-width of the averaging window for ST levels.
const ST_HALF_WINDOW_MS: f64 = 4.0;
const PATHOLOGICAL_Q_MS: f64 = 40.0;
const PATHOLOGICAL_Q_FRACTION: f64 = 0.25;

/// Per-beat values, indexed like [`LEAD_FEATURES`].
type BeatValues = [Option<f64>; LEAD_FEATURES.len()];

struct BeatCtx<'a> {
    x: &'a [f64],
    ms_per_sample: f64,
    baseline: Option<f64>,
}

impl BeatCtx<'_> {
    fn ms(&self, a: usize, b: usize) -> f64 {
        (b as f64 - a as f64) * self.ms_per_sample
    }

    fn uv(&self, i: usize) -> Option<f64> {
        self.baseline.map(|b| (self.x[i] - b) * 1000.0)
    }

    fn area(&self, a: usize, b: usize) -> Option<f64> {
        let base = self.baseline?;
        let sum: f64 = self.x[a..=b.min(self.x.len() - 1)].iter().map(|v| v - base).sum();
        Some(sum * 1000.0 * self.ms_per_sample)
    }

    fn level(&self, centre: usize) -> Option<f64> {
        let base = self.baseline?;
        let half = (ST_HALF_WINDOW_MS / self.ms_per_sample).round() as usize;
        if centre + half >= self.x.len() {
            return None;
        }
        let seg = &self.x[centre.saturating_sub(half)..=centre + half];
        Some((seg.iter().sum::<f64>() / seg.len() as f64 - base) * 1000.0)
    }
}

fn set(v: &mut BeatValues, key: &str, value: Option<f64>) {
    let i = lead_index(key).unwrap_or_else(|| panic!("unregistered lead feature {key}"));
    v[i] = value.filter(|x| x.is_finite());
}

fn get(v: &BeatValues, key: &str) -> Option<f64> {
    lead_index(key).and_then(|i| v[i])
}

fn interval(ctx: &BeatCtx, a: Option<usize>, b: Option<usize>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b >= a => Some(ctx.ms(a, b)),
        _ => None,
    }
}

/// Extrema of `seg` found with hysteresis `h`.
fn turning_points(seg: &[f64], h: f64) -> usize {
    let Some(&first) = seg.first() else { return 0 };
    let (mut hi, mut lo) = (first, first);
    let mut rising: Option<bool> = None;
    let mut count = 0;
    for &v in &seg[1..] {
        match rising {
            None => {
                hi = hi.max(v);
                lo = lo.min(v);
                if hi - first >= h {
                    rising = Some(true);
                    lo = v;
                } else if first - lo >= h {
                    rising = Some(false);
                    hi = v;
                }
            }
            Some(true) => {
                if v > hi {
                    hi = v;
                } else if hi - v >= h {
                    count += 1;
                    rising = Some(false);
                    lo = v;
                }
            }
            Some(false) => {
                if v < lo {
                    lo = v;
                } else if v - lo >= h {
                    count += 1;
                    rising = Some(true);
                    hi = v;
                }
            }
        }
    }
    count
}

fn qrs_features(ctx: &BeatCtx, beat: &Beat, v: &mut BeatValues) {
    let (Some(on), Some(off), Some(base)) = (beat.qrs_onset, beat.qrs_offset, ctx.baseline) else {
        return;
    };
    let off = off.min(ctx.x.len() - 1);
    let seg = &ctx.x[on..=off];
    let hi = seg.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    let lo = seg.iter().fold(f64::INFINITY, |m, &s| m.min(s));
    let p2p = hi - lo;
    set(v, "qrs_duration", Some(ctx.ms(on, off)));
    set(v, "qrs_net_area", ctx.area(on, off));
    set(v, "qrs_positive_peak", Some((hi - base) * 1000.0));
    set(v, "qrs_negative_peak", Some((lo - base) * 1000.0));

    let floor = LOBE_FRACTION * p2p;
    let lobes: Vec<Lobe> = if p2p > 0.0 { qrs_lobes(ctx.x, on, off, base, floor) } else { Vec::new() };
    let width = |l: &Lobe| ctx.ms(l.start, l.end + 1);
    let depth = |l: &Lobe| l.amplitude.abs() * 1000.0;
    let r_idx = lobes.iter().position(|l| l.amplitude > 0.0);
    let (q, r, s) = match r_idx {
        Some(ri) => (
            ri.checked_sub(1).map(|j| &lobes[j]),
            Some(&lobes[ri]),
            lobes.get(ri + 1).filter(|l| l.amplitude < 0.0),
        ),
        // QS complex: one negative deflection, recorded as Q.
        None => (lobes.first(), None, None),
    };
    set(v, "q_amplitude", q.map(depth));
    set(v, "q_duration", q.map(width));
    set(v, "r_amplitude", r.map(|l| l.amplitude * 1000.0));
    set(v, "r_duration", r.map(width));
    set(v, "s_amplitude", s.map(depth));
    set(v, "s_duration", s.map(width));
    if let Some(ri) = r_idx {
        let after_s = if s.is_some() { ri + 2 } else { ri + 1 };
        let r_prime = lobes[after_s.min(lobes.len())..].iter().find(|l| l.amplitude > 0.0 && s.is_some());
        set(v, "r_prime_amplitude", r_prime.map(|l| l.amplitude * 1000.0));
    }
    let r_amp = r.map(|l| l.amplitude * 1000.0).unwrap_or(0.0);
    let pathological = q.is_some_and(|q| width(q) >= PATHOLOGICAL_Q_MS || depth(q) >= PATHOLOGICAL_Q_FRACTION * r_amp);
    set(v, "pathological_q", Some(if pathological { 1.0 } else { 0.0 }));
    if let (Some(r), Some(s)) = (r, s) {
        set(v, "rs_ratio", Some(r.amplitude.abs() / s.amplitude.abs()));
    }
    if let Some(r) = r {
        set(v, "intrinsicoid_deflection", Some(ctx.ms(on, r.peak)));
    }
    if p2p > 0.0 {
        let extrema = turning_points(seg, floor);
        set(v, "fragmented_qrs_notches", Some(extrema.saturating_sub(lobes.len()) as f64));
    }

    let j60 = off + (ST_OFFSET_MS / ctx.ms_per_sample).round() as usize;
    let st_j = ctx.level(off);
    set(v, "st_level_j", st_j);
    if j60 < ctx.x.len() {
        let st_60 = ctx.level(j60);
        set(v, "st_level_j60", st_60);
        if let (Some(a), Some(b)) = (st_j, st_60) {
            set(v, "st_slope", Some((b - a) / ST_OFFSET_MS));
        }
    }
}

fn beat_values(x: &[f64], fs: f64, beat: &Beat) -> BeatValues {
    let mut v: BeatValues = [None; LEAD_FEATURES.len()];
    let ctx = BeatCtx {
        x,
        ms_per_sample: 1000.0 / fs,
        baseline: beat.qrs_onset.filter(|&i| i < x.len()).map(|i| beat_baseline(x, i, fs)),
    };
    if beat.max_index() >= x.len() {
        return v;
    }
    set(&mut v, "p_amplitude", beat.p_peak.and_then(|i| ctx.uv(i)));
    set(&mut v, "p_duration", interval(&ctx, beat.p_onset, beat.p_offset));
    if let (Some(a), Some(b)) = (beat.p_onset, beat.p_offset) {
        set(&mut v, "p_area", ctx.area(a, b));
    }
    set(&mut v, "pr_interval", interval(&ctx, beat.p_onset, beat.qrs_onset));
    set(&mut v, "pr_segment", interval(&ctx, beat.p_offset, beat.qrs_onset));
    qrs_features(&ctx, beat, &mut v);
    let t_amp = beat.t_peak.and_then(|i| ctx.uv(i));
    set(&mut v, "t_amplitude", t_amp);
    set(&mut v, "t_duration", interval(&ctx, beat.t_onset, beat.t_offset));
    if let (Some(a), Some(b)) = (beat.t_onset, beat.t_offset) {
        set(&mut v, "t_area", ctx.area(a, b));
    }
    if let (Some(t), Some(r)) = (t_amp, get(&v, "r_amplitude")) {
        if r > 0.0 {
            set(&mut v, "t_r_ratio", Some(t / r));
        }
    }
    set(&mut v, "qt_interval", interval(&ctx, beat.qrs_onset, beat.t_offset));
    set(&mut v, "jt_interval", interval(&ctx, beat.qrs_offset, beat.t_offset));
    v
}

/// Computes the 30 lead features from one lead's fiducials and raw samples (mV).
///
/// Per-beat values are aggregated by median; a feature is absent when no beat
/// yields it.
pub fn extract_lead_features(fiducials: &FiducialSet, samples: &[f64], fs: f64) -> LeadFeatures {
    let per_beat: Vec<BeatValues> = fiducials.beats.iter().map(|b| beat_values(samples, fs, b)).collect();
    let mut out = LeadFeatures::absent();
    for (i, desc) in LEAD_FEATURES.iter().enumerate() {
        if desc.key == "signal_quality" {
            continue;
        }
        let mut col: Vec<f64> = per_beat.iter().filter_map(|v| v[i]).collect();
        out.values[i] = median(&mut col);
    }
    if !samples.is_empty() {
        out.set("signal_quality", Some(fiducials.quality));
    }
    out
}
