//! Zero-phase bandpass and powerline notch filtering.
//!
//! All filters are Butterworth-characteristic second-order sections designed
//! by the bilinear transform with frequency pre-warping, run forward and
//! backward over an odd-reflected, steady-state initialised signal.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shortest signal the zero-phase filters accept.
pub const MIN_FILTER_LEN: usize = 100;
/// Upper bandpass edge is clamped to this fraction of the sampling rate.
pub const MAX_EDGE_FRACTION: f64 = 0.45;
/// Quality factor of the powerline notch.
pub const NOTCH_Q: f64 = 30.0;

const BUTTERWORTH_Q: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("signal of {len} samples is shorter than the minimum {min}")]
    TooShort { len: usize, min: usize },
    #[error("cutoff {cutoff} Hz is not below the Nyquist frequency {nyquist} Hz")]
    AboveNyquist { cutoff: f64, nyquist: f64 },
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub low_cutoff: f64,
    pub high_cutoff: f64,
    /// Powerline frequency to notch out, 50 or 60 Hz.
    pub notch_freq: Option<f64>,
    pub order: u32,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            low_cutoff: 0.67,
            high_cutoff: 100.0,
            notch_freq: None,
            order: 2,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.low_cutoff > 0.0 && self.low_cutoff < self.high_cutoff) {
            return Err(FilterError::InvalidSpec(format!(
                "need 0 < low_cutoff < high_cutoff, got {} and {}",
                self.low_cutoff, self.high_cutoff
            )));
        }
        if self.order != 2 {
            return Err(FilterError::InvalidSpec(format!(
                "only second-order sections are supported, got order {}",
                self.order
            )));
        }
        if let Some(f) = self.notch_freq {
            if f != 50.0 && f != 60.0 {
                return Err(FilterError::InvalidSpec(format!(
                    "notch must be 50 or 60 Hz, got {f}"
                )));
            }
        }
        Ok(())
    }

    /// Upper edge after clamping below Nyquist.
    pub fn effective_high_cutoff(&self, fs: f64) -> f64 {
        self.high_cutoff.min(MAX_EDGE_FRACTION * fs)
    }
}

/// Normalised biquad, `a0 == 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn from_raw(b: [f64; 3], a: [f64; 3]) -> Self {
        Self {
            b: [b[0] / a[0], b[1] / a[0], b[2] / a[0]],
            a: [a[1] / a[0], a[2] / a[0]],
        }
    }

    fn omega(freq: f64, fs: f64) -> (f64, f64) {
        let w0 = 2.0 * PI * freq / fs;
        (w0.cos(), w0.sin())
    }

    pub fn lowpass(cutoff: f64, fs: f64) -> Self {
        let (cos, sin) = Self::omega(cutoff, fs);
        let alpha = sin / (2.0 * BUTTERWORTH_Q);
        let k = (1.0 - cos) / 2.0;
        Self::from_raw([k, 2.0 * k, k], [1.0 + alpha, -2.0 * cos, 1.0 - alpha])
    }

    pub fn highpass(cutoff: f64, fs: f64) -> Self {
        let (cos, sin) = Self::omega(cutoff, fs);
        let alpha = sin / (2.0 * BUTTERWORTH_Q);
        let k = (1.0 + cos) / 2.0;
        Self::from_raw([k, -2.0 * k, k], [1.0 + alpha, -2.0 * cos, 1.0 - alpha])
    }

    pub fn notch(freq: f64, fs: f64, q: f64) -> Self {
        let (cos, sin) = Self::omega(freq, fs);
        let alpha = sin / (2.0 * q);
        Self::from_raw([1.0, -2.0 * cos, 1.0], [1.0 + alpha, -2.0 * cos, 1.0 - alpha])
    }

    /// Single-pass magnitude response at `freq`.
    pub fn magnitude(&self, freq: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq / fs;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num_re = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let num_im = self.b[1] * s1 + self.b[2] * s2;
        let den_re = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let den_im = self.a[0] * s1 + self.a[1] * s2;
        (num_re.hypot(num_im)) / (den_re.hypot(den_im))
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Largest pole magnitude.
    fn pole_radius(&self) -> f64 {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.sqrt()
        } else {
            let s = disc.sqrt();
            ((-a1 + s) / 2.0).abs().max(((-a1 - s) / 2.0).abs())
        }
    }

    /// Samples until the impulse response envelope falls below 1e-3.
    fn significant_len(&self) -> usize {
        let r = self.pole_radius();
        if r <= 0.0 {
            return 3;
        }
        if r >= 1.0 {
            return usize::MAX / 8;
        }
        ((1e-3f64).ln() / r.ln()).ceil() as usize + 3
    }

    /// Transposed direct form II run with the state set to the steady state
    /// for a constant input equal to `x[0]`.
    fn run_steady(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let y0 = x0 * self.dc_gain();
        let mut s2 = self.b[2] * x0 - self.a[1] * y0;
        let mut s1 = self.b[1] * x0 - self.a[0] * y0 + s2;
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + s1;
            s1 = self.b[1] * input - self.a[0] * y + s2;
            s2 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }
}

/// Runs a cascade of sections forward and backward with odd-reflection edge
/// padding of three times the cascade's significant impulse-response length.
pub fn filtfilt(sections: &[Biquad], signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n < 2 || sections.is_empty() {
        return signal.to_vec();
    }
    let sig_len: usize = sections
        .iter()
        .map(Biquad::significant_len)
        .fold(0usize, |acc, l| acc.saturating_add(l));
    let pad = sig_len.saturating_mul(3).min(n - 1);

    let mut ext = Vec::with_capacity(n + 2 * pad);
    let first = signal[0];
    let last = signal[n - 1];
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    for s in sections {
        s.run_steady(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.run_steady(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

fn check_len(signal: &[f64]) -> Result<(), FilterError> {
    if signal.len() < MIN_FILTER_LEN {
        return Err(FilterError::TooShort {
            len: signal.len(),
            min: MIN_FILTER_LEN,
        });
    }
    Ok(())
}

/// Bandpass sections for `spec` at `fs`: highpass then lowpass.
pub fn bandpass_sections(fs: f64, spec: &FilterSpec) -> Result<[Biquad; 2], FilterError> {
    spec.validate()?;
    let nyquist = fs / 2.0;
    let high = spec.effective_high_cutoff(fs);
    if high >= nyquist || spec.low_cutoff >= high {
        return Err(FilterError::AboveNyquist {
            cutoff: spec.low_cutoff.max(high),
            nyquist,
        });
    }
    Ok([Biquad::highpass(spec.low_cutoff, fs), Biquad::lowpass(high, fs)])
}

/// Zero-phase Butterworth bandpass.
pub fn bandpass(signal: &[f64], fs: f64, spec: &FilterSpec) -> Result<Vec<f64>, FilterError> {
    check_len(signal)?;
    let sections = bandpass_sections(fs, spec)?;
    Ok(filtfilt(&sections, signal))
}

/// Zero-phase powerline notch.
pub fn notch(signal: &[f64], fs: f64, notch_freq: f64) -> Result<Vec<f64>, FilterError> {
    check_len(signal)?;
    if notch_freq <= 0.0 || notch_freq >= fs / 2.0 {
        return Err(FilterError::AboveNyquist {
            cutoff: notch_freq,
            nyquist: fs / 2.0,
        });
    }
    Ok(filtfilt(&[Biquad::notch(notch_freq, fs, NOTCH_Q)], signal))
}

/// Bandpass followed by the optional notch.
pub fn preprocess(signal: &[f64], fs: f64, spec: &FilterSpec) -> Result<Vec<f64>, FilterError> {
    let y = bandpass(signal, fs, spec)?;
    match spec.notch_freq {
        Some(f) => notch(&y, fs, f),
        None => Ok(y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// Peak amplitude of the central half, away from edges.
    fn amplitude(x: &[f64]) -> f64 {
        let n = x.len();
        rms(&x[n / 4..3 * n / 4]) * std::f64::consts::SQRT_2
    }

    /// Squared magnitude of the analog 2nd-order Butterworth prototype
    /// evaluated at the pre-warped frequency; forward-backward squares it.
    fn butterworth_bp_gain(f: f64, fs: f64, lo: f64, hi: f64) -> f64 {
        let warp = |x: f64| (PI * x / fs).tan();
        let (w, wl, wh) = (warp(f), warp(lo), warp(hi));
        let hp = (w / wl).powi(4) / (1.0 + (w / wl).powi(4));
        let lp = 1.0 / (1.0 + (w / wh).powi(4));
        hp * lp
    }

    #[test]
    fn constant_is_removed() {
        let y = bandpass(&vec![1.0; 4000], 200.0, &FilterSpec::default()).unwrap();
        assert!(y.iter().all(|v| v.abs() < 0.01), "max {}", y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn passband_sine_preserved() {
        let y = bandpass(&sine(10.0, 200.0, 4000), 200.0, &FilterSpec::default()).unwrap();
        let expected = butterworth_bp_gain(10.0, 200.0, 0.67, 90.0);
        assert!((expected - 1.0).abs() < 0.05);
        let a = amplitude(&y);
        assert!((a - 1.0).abs() < 0.05, "amplitude {a}");
        assert!((a - expected).abs() < 0.01);
    }

    #[test]
    fn very_low_frequency_rejected() {
        let fs = 200.0;
        let x = sine(0.05, fs, 200 * 120);
        let y = bandpass(&x, fs, &FilterSpec::default()).unwrap();
        let expected = butterworth_bp_gain(0.05, fs, 0.67, 90.0);
        assert!(expected < 0.1);
        assert!(amplitude(&y) < 0.1, "amplitude {}", amplitude(&y));
    }

    #[test]
    fn design_matches_prototype() {
        let fs = 200.0;
        let s = bandpass_sections(fs, &FilterSpec::default()).unwrap();
        for f in [0.3, 0.67, 2.0, 10.0, 50.0, 85.0] {
            let single = s[0].magnitude(f, fs) * s[1].magnitude(f, fs);
            let proto = butterworth_bp_gain(f, fs, 0.67, 90.0);
            assert!((single * single - proto).abs() < 1e-9, "f={f}");
        }
    }

    #[test]
    fn nyquist_edge_is_clamped() {
        let spec = FilterSpec::default();
        assert_eq!(spec.effective_high_cutoff(200.0), 90.0);
        assert_eq!(spec.effective_high_cutoff(500.0), 100.0);
        // Clamping leaves the low edge above the upper edge.
        let bad = FilterSpec {
            low_cutoff: 50.0,
            high_cutoff: 100.0,
            ..FilterSpec::default()
        };
        assert!(matches!(
            bandpass(&vec![0.0; 200], 100.0, &bad),
            Err(FilterError::AboveNyquist { .. })
        ));
    }

    #[test]
    fn too_short_rejected() {
        assert_eq!(
            bandpass(&[0.0; 99], 200.0, &FilterSpec::default()),
            Err(FilterError::TooShort { len: 99, min: 100 })
        );
    }

    #[test]
    fn notch_attenuates_powerline() {
        let y = notch(&sine(50.0, 200.0, 2000), 200.0, 50.0).unwrap();
        assert!(rms(&y[400..1600]) < 0.07, "rms {}", rms(&y[400..1600]));
    }

    #[test]
    fn notch_passes_low_frequencies() {
        let y = notch(&sine(7.0, 200.0, 2000), 200.0, 50.0).unwrap();
        assert!((amplitude(&y) - 1.0).abs() < 0.02);
        // Ripple below f0 - 5 Hz stays under 1 dB for the two passes.
        let s = Biquad::notch(50.0, 200.0, NOTCH_Q);
        for f in [1.0, 10.0, 30.0, 44.0, 45.0] {
            let db = 20.0 * (s.magnitude(f, 200.0).powi(2)).log10();
            assert!(db > -1.0, "{f} Hz: {db} dB");
        }
        let at = s.magnitude(50.0, 200.0).powi(2);
        assert!(at < 0.1);
    }

    #[test]
    fn notch_above_nyquist_rejected() {
        assert!(matches!(
            notch(&[0.0; 200], 100.0, 50.0),
            Err(FilterError::AboveNyquist { .. })
        ));
    }

    #[test]
    fn zero_phase_lag() {
        let x = sine(7.0, 200.0, 2000);
        for y in [
            notch(&x, 200.0, 50.0).unwrap(),
            bandpass(&x, 200.0, &FilterSpec::default()).unwrap(),
        ] {
            let xc = |lag: i64| -> f64 {
                (200..1800)
                    .map(|i| x[i] * y[(i as i64 + lag) as usize])
                    .sum()
            };
            let best = (-20..=20).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
            assert_eq!(best, 0);
        }
    }

    #[test]
    fn spec_validation() {
        let spec = FilterSpec {
            notch_freq: Some(55.0),
            ..FilterSpec::default()
        };
        assert!(spec.validate().is_err());
        let spec = FilterSpec {
            low_cutoff: 0.0,
            ..FilterSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
