use super::DelineatorConfig;

/// Five-point derivative, in signal units per second.
pub(crate) fn derivative(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    let at = |i: isize| x[i.clamp(0, n as isize - 1) as usize];
    (0..n as isize)
        .map(|i| (-at(i - 2) - 2.0 * at(i - 1) + 2.0 * at(i + 1) + at(i + 2)) * fs / 8.0)
        .collect()
}

/// Centered moving average of width `w` samples, truncated at the edges.
pub(crate) fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let w = w.max(1);
    let half = w / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        prefix.push(acc);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + w - half).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn local_maxima(m: &[f64]) -> Vec<usize> {
    (1..m.len().saturating_sub(1))
        .filter(|&i| m[i] > m[i - 1] && m[i] >= m[i + 1] && m[i] > 0.0)
        .collect()
}

fn max_abs_in(x: &[f64], lo: usize, hi: usize) -> f64 {
    x[lo..hi.min(x.len())].iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Adaptive dual-threshold detector state.
struct Thresholds {
    spki: f64,
    npki: f64,
    fraction: f64,
}

impl Thresholds {
    fn thr1(&self) -> f64 {
        self.npki + self.fraction * (self.spki - self.npki)
    }

    fn thr2(&self) -> f64 {
        0.5 * self.thr1()
    }
}

/// R-peak indices of a band-passed lead: derivative, squaring and moving-window
/// integration with adaptive thresholds, searchback and T-wave rejection.
/// Peaks are refined to the largest absolute excursion within the refinement window.
pub fn detect_qrs(x: &[f64], fs: f64, cfg: &DelineatorConfig) -> Vec<usize> {
    let n = x.len();
    if n < 8 {
        return Vec::new();
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(hi - lo > 1e-9) {
        return Vec::new();
    }

    let d = derivative(x, fs);
    let sq: Vec<f64> = d.iter().map(|v| v * v).collect();
    let mwi = moving_average(&sq, cfg.samples(cfg.integration_window_ms, fs));
    let refractory = cfg.samples(cfg.refractory_ms, fs);
    let t_reject = cfg.samples(cfg.t_wave_reject_ms, fs);
    let slope_half = cfg.samples(75.0, fs);

    let learn = cfg.samples(cfg.learning_s * 1000.0, fs).min(n);
    let learn_max = mwi[..learn].iter().cloned().fold(0.0, f64::max);
    let learn_mean = mwi[..learn].iter().sum::<f64>() / learn as f64;
    let mut th = Thresholds {
        spki: 0.35 * learn_max,
        npki: 0.5 * learn_mean,
        fraction: cfg.threshold_fraction,
    };

    let candidates = local_maxima(&mwi);
    let mut beats: Vec<usize> = Vec::new();
    let mut beat_slopes: Vec<f64> = Vec::new();
    let mut rr: Vec<usize> = Vec::new();
    // Noise candidates since the last accepted beat, for searchback.
    let mut skipped: Vec<usize> = Vec::new();

    let slope_at = |i: usize| max_abs_in(&d, i.saturating_sub(slope_half), i + slope_half);

    let accept = |i: usize,
                      weight: f64,
                      th: &mut Thresholds,
                      beats: &mut Vec<usize>,
                      beat_slopes: &mut Vec<f64>,
                      rr: &mut Vec<usize>| {
        th.spki = weight * mwi[i] + (1.0 - weight) * th.spki;
        if let Some(&last) = beats.last() {
            rr.push(i - last);
        }
        beats.push(i);
        beat_slopes.push(slope_at(i));
    };

    for &c in &candidates {
        // Searchback for a missed beat once the gap is too long.
        if let (Some(&last), false) = (beats.last(), rr.is_empty()) {
            let recent = &rr[rr.len().saturating_sub(8)..];
            let rr_avg = recent.iter().sum::<usize>() as f64 / recent.len() as f64;
            if (c - last) as f64 > cfg.searchback_rr_factor * rr_avg {
                let best = skipped
                    .iter()
                    .copied()
                    .filter(|&s| s > last + refractory && c > s + refractory && mwi[s] > th.thr2())
                    .max_by(|a, b| mwi[*a].total_cmp(&mwi[*b]));
                if let Some(s) = best {
                    accept(s, 0.25, &mut th, &mut beats, &mut beat_slopes, &mut rr);
                    skipped.retain(|&k| k > s);
                }
            }
        }

        if mwi[c] <= th.thr1() {
            th.npki = cfg.noise_peak_weight * mwi[c] + (1.0 - cfg.noise_peak_weight) * th.npki;
            skipped.push(c);
            continue;
        }
        match beats.last().copied() {
            Some(last) if c - last < refractory => {
                // Same complex: keep the stronger integration peak.
                if mwi[c] > mwi[last] {
                    beats.pop();
                    beat_slopes.pop();
                    if !beats.is_empty() {
                        rr.pop();
                    }
                    accept(c, cfg.signal_peak_weight, &mut th, &mut beats, &mut beat_slopes, &mut rr);
                }
            }
            Some(last) if c - last < t_reject && slope_at(c) < 0.5 * beat_slopes[beat_slopes.len() - 1] => {
                th.npki = cfg.noise_peak_weight * mwi[c] + (1.0 - cfg.noise_peak_weight) * th.npki;
                skipped.push(c);
            }
            _ => {
                accept(c, cfg.signal_peak_weight, &mut th, &mut beats, &mut beat_slopes, &mut rr);
                skipped.clear();
            }
        }
    }

    refine(x, fs, cfg, &beats, &mwi)
}

/// Moves each integration peak onto the largest absolute excursion nearby and
/// enforces the refractory spacing.
fn refine(x: &[f64], fs: f64, cfg: &DelineatorConfig, beats: &[usize], mwi: &[f64]) -> Vec<usize> {
    let w = cfg.samples(cfg.refine_ms, fs);
    let refractory = cfg.samples(cfg.refractory_ms, fs);
    let n = x.len();
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(beats.len());
    for &b in beats {
        let lo = b.saturating_sub(w);
        let hi = (b + w + 1).min(n);
        let mut best = lo;
        for i in lo..hi {
            if x[i].abs() > x[best].abs() {
                best = i;
            }
        }
        match out.last_mut() {
            Some(prev) if best < prev.0 + refractory => {
                if mwi[b] > prev.1 {
                    *prev = (best, mwi[b]);
                }
            }
            _ => out.push((best, mwi[b])),
        }
    }
    out.into_iter().map(|(i, _)| i).collect()
}
