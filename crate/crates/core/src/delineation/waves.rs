use serde::{Deserialize, Serialize};

use super::qrs::moving_average;
use super::{median, Beat, DelineatorConfig, FiducialSet};

/// A same-signed excursion from the beat baseline inside the QRS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lobe {
    pub start: usize,
    pub end: usize,
    pub peak: usize,
    /// Signed, relative to the baseline.
    pub amplitude: f64,
}

/// Splits `[onset, offset]` into signed lobes, dropping those below `floor` and
/// merging same-signed neighbours.
pub fn qrs_lobes(x: &[f64], onset: usize, offset: usize, baseline: f64, floor: f64) -> Vec<Lobe> {
    let mut raw: Vec<Lobe> = Vec::new();
    for i in onset..=offset.min(x.len() - 1) {
        let v = x[i] - baseline;
        match raw.last_mut() {
            Some(l) if (l.amplitude >= 0.0) == (v >= 0.0) => {
                l.end = i;
                if v.abs() > l.amplitude.abs() {
                    l.peak = i;
                    l.amplitude = v;
                }
            }
            _ => raw.push(Lobe {
                start: i,
                end: i,
                peak: i,
                amplitude: v,
            }),
        }
    }
    let mut out: Vec<Lobe> = Vec::new();
    for l in raw.into_iter().filter(|l| l.amplitude.abs() >= floor) {
        match out.last_mut() {
            Some(prev) if (prev.amplitude >= 0.0) == (l.amplitude >= 0.0) => {
                prev.end = l.end;
                if l.amplitude.abs() > prev.amplitude.abs() {
                    prev.peak = l.peak;
                    prev.amplitude = l.amplitude;
                }
            }
            _ => out.push(l),
        }
    }
    out
}

/// Isoelectric level just before the QRS onset.
pub fn beat_baseline(x: &[f64], qrs_onset: usize, fs: f64) -> f64 {
    let w = ((0.02 * fs).round() as usize).max(1);
    let lo = qrs_onset.saturating_sub(w);
    let mut seg = x[lo..=qrs_onset].to_vec();
    median(&mut seg).unwrap_or(x[qrs_onset])
}

struct Ctx<'a> {
    x: &'a [f64],
    fs: f64,
    cfg: &'a DelineatorConfig,
    /// Smoothed slope used for the QRS walk-out, over `[i - h, i + h]`.
    ds: Vec<f64>,
    h: usize,
    noise_slope: f64,
    /// 20 ms moving average and its slope, for P and T.
    xs: Vec<f64>,
    dxs: Vec<f64>,
    /// Amplitude floor for P and T.
    wave_floor: f64,
}

impl<'a> Ctx<'a> {
    fn new(x: &'a [f64], fs: f64, cfg: &'a DelineatorConfig) -> Self {
        let (mut h, (mut ds, mut noise_slope)) = (cfg.samples(4.0, fs).max(1), (Vec::new(), 0.0));
        for span_ms in [4.0, 10.0] {
            h = cfg.samples(span_ms, fs).max(1);
            (ds, noise_slope) = slope_and_noise(x, h, cfg.samples(40.0, fs).max(1));
            let peak = ds.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            // Noisy leads get the wider slope span.
            if 2.5 * noise_slope < 0.06 * peak {
                break;
            }
        }
        let xs = moving_average(x, cfg.samples(20.0, fs).max(1));
        let dxs = central_slope(&xs, 1);
        Ctx {
            x,
            fs,
            cfg,
            ds,
            h,
            noise_slope,
            xs,
            dxs,
            wave_floor: cfg.amplitude_floor_mv,
        }
    }

    fn ms(&self, ms: f64) -> usize {
        self.cfg.samples(ms, self.fs)
    }

    fn half(&self) -> usize {
        self.h
    }

    fn quiet(&self) -> usize {
        self.ms(10.0).max(2)
    }
}

fn central_slope(x: &[f64], h: usize) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h).min(n - 1);
            if hi == lo { 0.0 } else { (x[hi] - x[lo]) / (hi - lo) as f64 }
        })
        .collect()
}

/// Slope over `[i - h, i + h]` and the robust spread of its fast component.
fn slope_and_noise(x: &[f64], h: usize, slow_w: usize) -> (Vec<f64>, f64) {
    let ds = central_slope(x, h);
    let slow = moving_average(&ds, slow_w);
    let mut jitter: Vec<f64> = ds.iter().zip(&slow).map(|(a, b)| (a - b).abs()).collect();
    let noise = median(&mut jitter).unwrap_or(0.0) / 0.6745;
    (ds, noise)
}

/// P/QRS/T fiducials around each detected R peak of a band-passed lead.
/// The returned set has an empty lead name and quality 1; callers fill both.
pub fn delineate_waves(x: &[f64], fs: f64, r_peaks: &[usize], cfg: &DelineatorConfig) -> FiducialSet {
    let mut set = FiducialSet {
        lead: String::new(),
        beats: Vec::new(),
        quality: 1.0,
    };
    if x.len() < 8 || r_peaks.is_empty() {
        return set;
    }
    let ctx = Ctx::new(x, fs, cfg);
    let template = build_template(&ctx, r_peaks);
    let beats: Vec<Beat> = r_peaks
        .iter()
        .map(|&r| {
            template
                .as_ref()
                .and_then(|t| from_template(&ctx, t, r))
                .unwrap_or_else(|| qrs_bounds(&ctx, r, r_peaks))
        })
        .collect();
    set.beats = finish_beats(ctx, beats);
    set
}

/// Re-runs Q/R/S assignment and P/T delineation on beats whose QRS bounds were
/// set externally (e.g. agreed across leads). P and T fields are recomputed.
pub fn redelineate(x: &[f64], fs: f64, beats: &[Beat], cfg: &DelineatorConfig) -> Vec<Beat> {
    if x.len() < 8 || beats.is_empty() {
        return Vec::new();
    }
    let ctx = Ctx::new(x, fs, cfg);
    let beats = beats
        .iter()
        .map(|b| match (b.qrs_onset, b.qrs_offset) {
            (Some(on), Some(off)) => {
                let anchor = if b.r_peak > on && b.r_peak < off { b.r_peak } else { (on + off) / 2 };
                assign_qrs(x, fs, cfg.amplitude_floor_mv, anchor, on, off)
            }
            _ => Beat::anchored(b.r_peak),
        })
        .collect();
    finish_beats(ctx, beats)
}

/// P/T delineation with the lead's relative wave floor, then drops disordered
/// or too-close beats.
fn finish_beats(mut ctx: Ctx, mut beats: Vec<Beat>) -> Vec<Beat> {
    let (x, fs, cfg) = (ctx.x, ctx.fs, ctx.cfg);
    let mut spans: Vec<f64> = beats
        .iter()
        .filter_map(|b| {
            let seg = &x[b.qrs_onset?..=b.qrs_offset?];
            let (lo, hi) = seg.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), v| (a.min(*v), c.max(*v)));
            Some(hi - lo)
        })
        .collect();
    let span = median(&mut spans).unwrap_or(0.0);
    ctx.wave_floor = cfg.amplitude_floor_mv.max(cfg.relative_wave_floor * span);
    let ctx = ctx;
    for k in 0..beats.len() {
        let prev_end = k.checked_sub(1).map(|j| {
            let b = &beats[j];
            b.t_offset.or(b.qrs_offset).unwrap_or(b.r_peak)
        });
        let next_start = beats.get(k + 1).map(|b| b.qrs_onset.unwrap_or(b.r_peak));
        let rr = match (k.checked_sub(1), beats.get(k + 1)) {
            (_, Some(next)) => next.r_peak - beats[k].r_peak,
            (Some(j), None) => beats[k].r_peak - beats[j].r_peak,
            (None, None) => ctx.ms(1000.0),
        };
        let mut b = beats[k];
        if let Some(on) = b.qrs_onset {
            let base = beat_baseline(x, on, fs);
            p_wave(&ctx, &mut b, base, prev_end);
            t_wave(&ctx, &mut b, base, rr, next_start);
        }
        beats[k] = b;
    }

    let min_gap = ((0.2 * fs).floor() as usize).max(1);
    let mut out: Vec<Beat> = Vec::with_capacity(beats.len());
    for b in beats {
        if !b.is_ordered() {
            continue;
        }
        match out.last() {
            Some(prev) if b.r_peak < prev.r_peak + min_gap => {}
            _ => out.push(b),
        }
    }
    out
}

fn walk_out(ds: &[f64], anchor: usize, lo: usize, hi: usize, thr: f64, h: usize, quiet: usize) -> (usize, usize) {
    let is_quiet = |i: usize| ds[i].abs() < thr;
    let mut onset = lo;
    let mut i = anchor;
    while i > lo + quiet {
        if (i - quiet..=i).all(is_quiet) {
            onset = (i + h).min(anchor);
            break;
        }
        i -= 1;
    }
    let mut offset = hi;
    let mut i = anchor;
    while i + quiet < hi {
        if (i..=i + quiet).all(is_quiet) {
            offset = i.saturating_sub(h).max(anchor);
            break;
        }
        i += 1;
    }
    (onset, offset)
}

/// QRS boundaries and Q/R/S peaks of `x` around `anchor`, or just the anchor when
/// the complex cannot be bounded.
fn assign_qrs(x: &[f64], fs: f64, floor: f64, anchor: usize, onset: usize, offset: usize) -> Beat {
    let mut beat = Beat::anchored(anchor);
    if onset >= anchor || offset <= anchor {
        return beat;
    }
    beat.qrs_onset = Some(onset);
    beat.qrs_offset = Some(offset);
    let base = beat_baseline(x, onset, fs);
    let lobes = qrs_lobes(x, onset, offset, base, floor);
    match lobes.iter().position(|l| l.amplitude > 0.0) {
        Some(ri) => {
            beat.r_peak = lobes[ri].peak;
            beat.q_peak = ri.checked_sub(1).map(|j| lobes[j].peak);
            beat.s_peak = lobes.get(ri + 1).map(|l| l.peak);
        }
        None => {
            // QS complex: the dominant deflection stands in for R.
            if let Some(l) = lobes.iter().max_by(|a, b| a.amplitude.abs().total_cmp(&b.amplitude.abs())) {
                beat.r_peak = l.peak;
            }
        }
    }
    if beat.r_peak <= onset || beat.r_peak >= offset {
        beat.r_peak = anchor;
        beat.q_peak = None;
        beat.s_peak = None;
        return beat;
    }
    beat.q_peak = beat.q_peak.filter(|&q| q >= onset && q < beat.r_peak);
    beat.s_peak = beat.s_peak.filter(|&s| s > beat.r_peak && s <= offset);
    beat
}

fn qrs_threshold(ds: &[f64], lo: usize, hi: usize, noise: f64) -> f64 {
    let dmax = ds[lo..=hi].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (0.06 * dmax).max(2.5 * noise)
}

fn qrs_bounds(ctx: &Ctx, anchor: usize, all: &[usize]) -> Beat {
    let n = ctx.x.len();
    let search = ctx.ms(ctx.cfg.qrs_search_ms);
    // Never walk past the midpoint to a neighbouring beat.
    let idx = all.partition_point(|&r| r < anchor);
    let lo_nb = idx.checked_sub(1).map(|j| (all[j] + anchor) / 2).unwrap_or(0);
    let hi_nb = all.get(idx + 1).map(|&r| (r + anchor) / 2).unwrap_or(n - 1);
    let lo = anchor.saturating_sub(search).max(lo_nb);
    let hi = (anchor + search).min(n - 1).min(hi_nb);
    let thr = qrs_threshold(&ctx.ds, lo, hi, ctx.noise_slope);
    let (onset, offset) = walk_out(&ctx.ds, anchor, lo, hi, thr, ctx.half(), ctx.quiet());
    assign_qrs(ctx.x, ctx.fs, ctx.cfg.amplitude_floor_mv, anchor, onset, offset)
}

/// Ensemble-averaged QRS of a lead, used for beats that match it.
struct Template {
    /// Beat fields relative to the anchor.
    beat: Beat,
    anchor: usize,
    samples: Vec<f64>,
}

const TEMPLATE_MIN_BEATS: usize = 3;
const TEMPLATE_MIN_CORR: f64 = 0.8;

fn build_template(ctx: &Ctx, anchors: &[usize]) -> Option<Template> {
    let n = ctx.x.len();
    let min_rr = anchors.windows(2).map(|w| w[1] - w[0]).min()?;
    let half = ctx.ms(ctx.cfg.qrs_search_ms).min(min_rr / 2);
    let inside: Vec<usize> = anchors.iter().copied().filter(|&a| a >= half && a + half < n).collect();
    if inside.len() < TEMPLATE_MIN_BEATS || half < 2 * ctx.quiet() {
        return None;
    }
    let len = 2 * half + 1;
    let mut samples = vec![0.0; len];
    for &a in &inside {
        for (t, v) in samples.iter_mut().zip(&ctx.x[a - half..=a + half]) {
            *t += v;
        }
    }
    samples.iter_mut().for_each(|v| *v /= inside.len() as f64);
    let ds = central_slope(&samples, ctx.half());
    let noise = ctx.noise_slope / (inside.len() as f64).sqrt();
    let thr = qrs_threshold(&ds, 0, len - 1, noise);
    let (onset, offset) = walk_out(&ds, half, 0, len - 1, thr, ctx.half(), ctx.quiet());
    let beat = assign_qrs(&samples, ctx.fs, ctx.cfg.amplitude_floor_mv, half, onset, offset);
    beat.qrs_onset?;
    Some(Template {
        beat,
        anchor: half,
        samples,
    })
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 { 0.0 } else { sab / (saa * sbb).sqrt() }
}

/// Template-derived beat at `anchor` when the beat's QRS matches the template.
fn from_template(ctx: &Ctx, tpl: &Template, anchor: usize) -> Option<Beat> {
    let (on, off) = (tpl.beat.qrs_onset?, tpl.beat.qrs_offset?);
    let start = anchor.checked_sub(tpl.anchor - on)?;
    let end = anchor + (off - tpl.anchor);
    if end >= ctx.x.len() {
        return None;
    }
    if correlation(&ctx.x[start..=end], &tpl.samples[on..=off]) < TEMPLATE_MIN_CORR {
        return None;
    }
    let k = anchor as isize - tpl.anchor as isize;
    Some(tpl.beat.shifted(k))
}

/// Tangent through the steepest `sign`-directed slope met while scanning from
/// `peak` towards `limit`, intersected with `base`. The scan stops once the
/// slope falls back below a quarter of its maximum, so a neighbouring wave
/// cannot capture the tangent.
fn tangent_crossing(ctx: &Ctx, peak: usize, limit: usize, sign: f64, base: f64) -> Option<usize> {
    if peak == limit {
        return None;
    }
    let step: isize = if limit > peak { 1 } else { -1 };
    let min_reach = ctx.ms(20.0);
    let mut best: Option<(usize, f64)> = None;
    let mut i = peak;
    loop {
        i = (i as isize + step) as usize;
        let v = sign * ctx.dxs[i];
        match best {
            Some((_, b)) if v < 0.25 * b && i.abs_diff(peak) >= min_reach => break,
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
        if i == limit {
            break;
        }
    }
    let (m, v) = best?;
    if v <= 0.0 {
        return None;
    }
    let t = m as f64 + (base - ctx.xs[m]) / ctx.dxs[m];
    (t.is_finite() && t >= 0.0).then(|| t.round() as usize)
}

/// Peak of a wave in `[lo, hi]`: the largest excursion from `base`. Rejected when
/// below the amplitude floor, on the window edge, or not standing out by at least
/// half its height against the lowest point on each side within `[left, right]`.
fn wave_peak(ctx: &Ctx, lo: usize, hi: usize, base: f64, left: usize, right: usize) -> Option<(usize, f64)> {
    if hi <= lo + 2 {
        return None;
    }
    let peak = (lo..=hi).max_by(|&a, &b| (ctx.xs[a] - base).abs().total_cmp(&(ctx.xs[b] - base).abs()))?;
    let amp = ctx.xs[peak] - base;
    if amp.abs() < ctx.wave_floor || peak == lo || peak == hi {
        return None;
    }
    let sign = amp.signum();
    let lowest = |r: std::ops::RangeInclusive<usize>| {
        r.map(|i| sign * (ctx.xs[i] - base)).fold(f64::INFINITY, f64::min)
    };
    let floor = lowest(left.min(peak)..=peak).max(lowest(peak..=right.max(peak).min(ctx.xs.len() - 1)));
    if amp.abs() - floor < 0.5 * amp.abs() {
        return None;
    }
    Some((peak, amp))
}

fn p_wave(ctx: &Ctx, b: &mut Beat, base: f64, prev_end: Option<usize>) {
    let Some(qrs_on) = b.qrs_onset else { return };
    let floor_lo = prev_end.map(|e| e + 1).unwrap_or(0);
    let lo = b.r_peak.saturating_sub(ctx.ms(ctx.cfg.p_window_start_ms)).max(floor_lo);
    let hi = b.r_peak.saturating_sub(ctx.ms(ctx.cfg.p_window_end_ms)).min(qrs_on.saturating_sub(1));
    let Some((peak, amp)) = wave_peak(ctx, lo, hi, base, lo, qrs_on) else { return };
    let sign = amp.signum();
    let reach = ctx.ms(150.0);
    let on = tangent_crossing(ctx, peak, peak.saturating_sub(reach).max(floor_lo), sign, base);
    let off = tangent_crossing(ctx, peak, (peak + reach).min(qrs_on), -sign, base);
    if let (Some(on), Some(off)) = (on, off) {
        if on >= floor_lo && on < peak && peak < off && off <= qrs_on {
            b.p_onset = Some(on);
            b.p_peak = Some(peak);
            b.p_offset = Some(off);
        }
    }
}

fn t_wave(ctx: &Ctx, b: &mut Beat, base: f64, rr: usize, next_start: Option<usize>) {
    let Some(j) = b.qrs_offset else { return };
    let n = ctx.x.len();
    let limit = next_start.map(|s| s.saturating_sub(1)).unwrap_or(n - 1).min(n - 1);
    let span = ctx
        .ms(ctx.cfg.t_window_max_ms)
        .min((ctx.cfg.t_window_rr_fraction * rr as f64).round() as usize);
    let lo = j + ctx.ms(ctx.cfg.t_window_min_ms);
    let hi = (j + span).min(limit);
    let right = (hi + ctx.ms(250.0)).min(limit);
    let Some((peak, amp)) = wave_peak(ctx, lo, hi, base, j, right) else { return };
    let sign = amp.signum();
    let on = tangent_crossing(ctx, peak, j + ctx.ms(20.0), sign, base);
    let off = tangent_crossing(ctx, peak, (peak + ctx.ms(250.0)).min(limit), -sign, base);
    if let (Some(on), Some(off)) = (on, off) {
        if j <= on && on < peak && peak < off && off < n {
            b.t_onset = Some(on);
            b.t_peak = Some(peak);
            b.t_offset = Some(off);
        }
    }
}
