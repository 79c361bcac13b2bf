//! Second-order IIR sections and zero-phase (forward-backward) filtering.

use std::f64::consts::{PI, SQRT_2};

/// Direct-form II transposed biquad coefficients, `a0` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Butterworth low-pass via the bilinear transform with pre-warping.
    pub fn lowpass(cutoff_hz: f64, fs: f64) -> Self {
        let k = (PI * cutoff_hz / fs).tan();
        let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
        let b0 = k * k * norm;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - SQRT_2 * k + k * k) * norm],
        }
    }

    /// Butterworth high-pass via the bilinear transform with pre-warping.
    pub fn highpass(cutoff_hz: f64, fs: f64) -> Self {
        let k = (PI * cutoff_hz / fs).tan();
        let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
        Self {
            b: [norm, -2.0 * norm, norm],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - SQRT_2 * k + k * k) * norm],
        }
    }

    fn dc_gain(&self) -> f64 {
        let den = 1.0 + self.a[0] + self.a[1];
        if den.abs() < f64::EPSILON {
            0.0
        } else {
            (self.b[0] + self.b[1] + self.b[2]) / den
        }
    }

    /// State that makes the section output constant for a constant input of 1.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        [g - self.b[0], self.b[2] - self.a[1] * g]
    }
}

/// A cascade of biquads applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    sections: Vec<Biquad>,
}

impl Cascade {
    pub fn new(sections: Vec<Biquad>) -> Self {
        Self { sections }
    }

    /// Band-pass as a high-pass section followed by a low-pass section.
    pub fn bandpass(low_hz: f64, high_hz: f64, fs: f64) -> Self {
        Self::new(vec![Biquad::highpass(low_hz, fs), Biquad::lowpass(high_hz, fs)])
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Causal filtering, starting every section in the steady state for `x[0]`.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        let Some(&first) = x.first() else {
            return out;
        };
        let mut level = first;
        for s in &self.sections {
            let zi = s.step_state();
            let mut z = [zi[0] * level, zi[1] * level];
            for v in out.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z[0];
                z[0] = s.b[1] * input - s.a[0] * y + z[1];
                z[1] = s.b[2] * input - s.a[1] * y;
                *v = y;
            }
            level *= s.dc_gain();
        }
        out
    }

    /// Zero-phase filtering: odd-reflection padding, forward pass, reverse pass.
    pub fn filtfilt(&self, x: &[f64], pad: usize) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = pad.min(n.saturating_sub(1));
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (x0, xn) = (x[0], x[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x0 - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * xn - x[n - 1 - i]));

        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y.drain(..pad);
        y.truncate(n);
        y
    }
}

/// Steady-state gain of the cascade at `freq_hz` for sampling rate `fs`.
pub fn magnitude_response(cascade: &Cascade, freq_hz: f64, fs: f64) -> f64 {
    let w = 2.0 * PI * freq_hz / fs;
    let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
    cascade
        .sections()
        .iter()
        .map(|s| {
            let nr = s.b[0] + s.b[1] * c1 + s.b[2] * c2;
            let ni = -(s.b[1] * s1 + s.b[2] * s2);
            let dr = 1.0 + s.a[0] * c1 + s.a[1] * c2;
            let di = -(s.a[0] * s1 + s.a[1] * s2);
            ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
        })
        .product()
}
