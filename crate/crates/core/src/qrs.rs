//! Single-lead R-peak detection and the bSQI beat-agreement quality index.
//!
//! [`detect_qrs`] follows the Pan–Tompkins scheme (5–15 Hz bandpass,
//! derivative, squaring, 150 ms integration, adaptive dual thresholds with
//! search-back and T-wave discrimination) in an offline, zero-delay form.
//! [`detect_qrs_secondary`] is a structurally different energy detector used
//! only as the second opinion for bSQI.

use std::cmp::Ordering;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{filtfilt, Biquad};

/// Default bSQI matching tolerance in seconds.
pub const BSQI_TOLERANCE: f64 = 0.15;

const MIN_SECONDS: f64 = 2.0;
const REFRACTORY: f64 = 0.2;
const SECONDARY_REFRACTORY: f64 = 0.25;
const LOCALIZE: f64 = 0.05;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QrsError {
    #[error("signal of {len} samples is shorter than {min} samples")]
    TooShort { len: usize, min: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrsAnnotations {
    pub r_peaks: Vec<usize>,
    pub fs: u32,
}

impl QrsAnnotations {
    /// Peaks inside `range`, re-indexed relative to `range.start`.
    pub fn slice(&self, range: Range<usize>) -> QrsAnnotations {
        let lo = self.r_peaks.partition_point(|&p| p < range.start);
        let hi = self.r_peaks.partition_point(|&p| p < range.end);
        QrsAnnotations {
            r_peaks: self.r_peaks[lo..hi].iter().map(|p| p - range.start).collect(),
            fs: self.fs,
        }
    }

    pub fn len(&self) -> usize {
        self.r_peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_peaks.is_empty()
    }
}

fn check_len(signal: &[f64], fs: u32) -> Result<(), QrsError> {
    let min = (MIN_SECONDS * fs as f64).ceil() as usize;
    if signal.len() < min {
        return Err(QrsError::TooShort {
            len: signal.len(),
            min,
        });
    }
    Ok(())
}

fn band(signal: &[f64], fs: f64, lo: f64, hi: f64) -> Vec<f64> {
    filtfilt(&[Biquad::highpass(lo, fs), Biquad::lowpass(hi, fs)], signal)
}

/// Centred moving average over `w` samples.
fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
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
            (prefix[hi] - prefix[lo]) / w as f64
        })
        .collect()
}

/// Strictly positive local maxima, thinned greedily (largest first) so that
/// no two survivors are closer than `min_dist` samples.
fn local_peaks(x: &[f64], min_dist: usize) -> Vec<usize> {
    let n = x.len();
    let mut cand: Vec<usize> = (0..n)
        .filter(|&i| {
            x[i] > 0.0
                && (i == 0 || x[i] > x[i - 1])
                && (i + 1 == n || x[i] >= x[i + 1])
        })
        .collect();
    cand.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut taken = vec![false; n];
    let mut keep: Vec<usize> = Vec::new();
    for i in cand {
        let lo = i.saturating_sub(min_dist.saturating_sub(1));
        let hi = (i + min_dist).min(n);
        if taken[lo..hi].iter().any(|&t| t) {
            continue;
        }
        taken[i] = true;
        keep.push(i);
    }
    keep.sort_unstable();
    keep
}

fn argmax_abs(x: &[f64], range: Range<usize>) -> usize {
    let mut best = range.start;
    for i in range {
        if x[i].abs() > x[best].abs() {
            best = i;
        }
    }
    best
}

/// Moves each detection to the largest-magnitude sample of `signal` within
/// ±50 ms, then drops any peak closer than `refractory` samples to the
/// previously kept one.
fn localize(signal: &[f64], fs: f64, detections: &[usize], refractory: usize) -> Vec<usize> {
    let n = signal.len();
    let half = (LOCALIZE * fs).round() as usize;
    let mut out: Vec<usize> = Vec::with_capacity(detections.len());
    for &d in detections {
        let r = argmax_abs(signal, d.saturating_sub(half)..(d + half + 1).min(n));
        match out.last() {
            Some(&prev) if r < prev + refractory => {
                if signal[r].abs() > signal[prev].abs() {
                    out.pop();
                    if out.last().is_none_or(|&p| r >= p + refractory) {
                        out.push(r);
                    }
                }
            }
            _ => out.push(r),
        }
    }
    out
}

struct Level {
    signal: f64,
    noise: f64,
}

impl Level {
    fn threshold(&self) -> f64 {
        self.noise + 0.25 * (self.signal - self.noise)
    }
}

/// Pan–Tompkins R-peak detection on a bandpass-filtered lead.
pub fn detect_qrs(signal: &[f64], fs: u32) -> Result<QrsAnnotations, QrsError> {
    check_len(signal, fs)?;
    let f = fs as f64;
    let n = signal.len();
    let bp = band(signal, f, 5.0, 15.0);

    // Five-point derivative, centred.
    let mut deriv = vec![0.0; n];
    for i in 2..n.saturating_sub(2) {
        deriv[i] = (2.0 * bp[i + 2] + bp[i + 1] - bp[i - 1] - 2.0 * bp[i - 2]) / 8.0;
    }
    let squared: Vec<f64> = deriv.iter().map(|d| d * d).collect();
    let mwi = moving_average(&squared, (0.15 * f).round() as usize);

    let refractory = (REFRACTORY * f).round() as usize;
    let peaks = local_peaks(&mwi, refractory);

    let init = ((MIN_SECONDS * f) as usize).min(n);
    let init_max = |x: &[f64]| x[..init].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let init_mean = |x: &[f64]| x[..init].iter().map(|v| v.abs()).sum::<f64>() / init as f64;
    let mut lev_i = Level {
        signal: init_max(&mwi) / 3.0,
        noise: init_mean(&mwi) / 2.0,
    };
    let mut lev_f = Level {
        signal: init_max(&bp) / 3.0,
        noise: init_mean(&bp) / 2.0,
    };

    let search = (0.15 * f).round() as usize;
    let bp_peak = |p: usize| argmax_abs(&bp, p.saturating_sub(search)..(p + search / 2 + 1).min(n));
    let max_slope = |p: usize| -> f64 {
        let w = (0.075 * f).round() as usize;
        mwi[p.saturating_sub(w)..=p]
            .windows(2)
            .map(|s| s[1] - s[0])
            .fold(f64::MIN, f64::max)
    };

    let mut qrs: Vec<usize> = Vec::new();
    let mut qrs_mwi: Vec<usize> = Vec::new();
    let mut last_slope = 0.0;
    let mut rr: Vec<usize> = Vec::new();
    let t_wave_window = (0.36 * f).round() as usize;

    for &p in &peaks {
        let value = mwi[p];
        let y = bp_peak(p);
        let y_value = bp[y].abs();

        // Search back for a missed beat when the gap is long.
        if let (Some(&last), false) = (qrs_mwi.last(), rr.is_empty()) {
            let avg = rr.iter().rev().take(8).sum::<usize>() as f64 / rr.len().min(8) as f64;
            if (p - last) as f64 >= 1.66 * avg {
                let lo = last + refractory;
                let hi = p.saturating_sub(refractory);
                if hi > lo {
                    let cand = (lo..hi)
                        .max_by(|&a, &b| mwi[a].total_cmp(&mwi[b]).then(b.cmp(&a)))
                        .unwrap();
                    let cy = bp_peak(cand);
                    if mwi[cand] > 0.5 * lev_i.threshold() && bp[cy].abs() > 0.5 * lev_f.threshold() {
                        rr.push(cand - last);
                        qrs.push(cy);
                        qrs_mwi.push(cand);
                        last_slope = max_slope(cand);
                        lev_i.signal = 0.25 * mwi[cand] + 0.75 * lev_i.signal;
                        lev_f.signal = 0.25 * bp[cy].abs() + 0.75 * lev_f.signal;
                    }
                }
            }
        }

        if value >= lev_i.threshold() && value > 0.0 {
            let is_t_wave = match qrs_mwi.last() {
                Some(&last) if p > last && p - last < t_wave_window => {
                    max_slope(p) < 0.5 * last_slope
                }
                _ => false,
            };
            if is_t_wave {
                lev_i.noise = 0.125 * value + 0.875 * lev_i.noise;
                lev_f.noise = 0.125 * y_value + 0.875 * lev_f.noise;
                continue;
            }
            if y_value >= lev_f.threshold() {
                if let Some(&last) = qrs_mwi.last() {
                    if p <= last {
                        continue;
                    }
                    rr.push(p - last);
                }
                qrs.push(y);
                qrs_mwi.push(p);
                last_slope = max_slope(p);
                lev_i.signal = 0.125 * value + 0.875 * lev_i.signal;
                lev_f.signal = 0.125 * y_value + 0.875 * lev_f.signal;
            } else {
                lev_f.noise = 0.125 * y_value + 0.875 * lev_f.noise;
                lev_i.noise = 0.125 * value + 0.875 * lev_i.noise;
            }
        } else {
            lev_i.noise = 0.125 * value + 0.875 * lev_i.noise;
            lev_f.noise = 0.125 * y_value + 0.875 * lev_f.noise;
        }
    }

    qrs.sort_unstable();
    Ok(QrsAnnotations {
        r_peaks: localize(signal, f, &qrs, refractory),
        fs,
    })
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Energy detector: 10–25 Hz band, squared, 120 ms smoothing, local maxima
/// above `max(0.3 * P99, 4 * median)` of each 10 s block, 250 ms refractory.
pub fn detect_qrs_secondary(signal: &[f64], fs: u32) -> Result<QrsAnnotations, QrsError> {
    check_len(signal, fs)?;
    let f = fs as f64;
    let n = signal.len();
    let bp = band(signal, f, 10.0, 25.0);
    let sq: Vec<f64> = bp.iter().map(|v| v * v).collect();
    let energy = moving_average(&sq, (0.12 * f).round() as usize);

    let block = (10.0 * f) as usize;
    let mut thresholds = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = (start + block).min(n);
        if n - end < block / 2 {
            end = n;
        }
        let mut sorted = energy[start..end].to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        let thr = (0.3 * percentile_sorted(&sorted, 0.99)).max(4.0 * percentile_sorted(&sorted, 0.5));
        thresholds[start..end].fill(thr);
        start = end;
    }

    let refractory = (SECONDARY_REFRACTORY * f).round() as usize;
    let gated: Vec<f64> = energy
        .iter()
        .zip(&thresholds)
        .map(|(&e, &t)| if e > t { e } else { 0.0 })
        .collect();
    let peaks = local_peaks(&gated, refractory);
    Ok(QrsAnnotations {
        r_peaks: localize(signal, f, &peaks, refractory),
        fs,
    })
}

/// Beat agreement between two detectors: matched / (|a| + |b| - matched),
/// using greedy nearest-first one-to-one matching within `tol` seconds.
pub fn compute_bsqi(a: &QrsAnnotations, b: &QrsAnnotations, tol: f64) -> f64 {
    let fs = a.fs.max(b.fs) as f64;
    let tol = (tol * fs).round() as usize;
    let mut pairs: Vec<(usize, usize, usize, usize)> = Vec::new();
    for (i, &pa) in a.r_peaks.iter().enumerate() {
        let lo = b.r_peaks.partition_point(|&p| p + tol < pa);
        for (j, &pb) in b.r_peaks.iter().enumerate().skip(lo) {
            if pb > pa + tol {
                break;
            }
            pairs.push((pa.abs_diff(pb), pa.min(pb), i, j));
        }
    }
    pairs.sort_unstable();
    let mut used_a = vec![false; a.r_peaks.len()];
    let mut used_b = vec![false; b.r_peaks.len()];
    let mut matched = 0usize;
    for (_, _, i, j) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            matched += 1;
        }
    }
    let denom = a.r_peaks.len() + b.r_peaks.len() - matched;
    if denom == 0 {
        0.0
    } else {
        matched as f64 / denom as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(p: &[usize]) -> QrsAnnotations {
        QrsAnnotations {
            r_peaks: p.to_vec(),
            fs: 200,
        }
    }

    #[test]
    fn bsqi_identical() {
        let a = ann(&[100, 300, 500]);
        assert_eq!(compute_bsqi(&a, &a, BSQI_TOLERANCE), 1.0);
    }

    #[test]
    fn bsqi_disjoint() {
        let a = ann(&[100, 300, 500, 700, 900]);
        let b = ann(&[2000, 2200, 2400, 2600, 2800]);
        assert_eq!(compute_bsqi(&a, &b, BSQI_TOLERANCE), 0.0);
    }

    #[test]
    fn bsqi_extra_beats() {
        let a: Vec<usize> = (0..10).map(|i| 100 + 200 * i).collect();
        let mut b = a.clone();
        b.extend([2500, 2700]);
        let q = compute_bsqi(&ann(&a), &ann(&b), BSQI_TOLERANCE);
        assert!((q - 10.0 / 12.0).abs() < 1e-12);
        assert_eq!(q, compute_bsqi(&ann(&b), &ann(&a), BSQI_TOLERANCE));
    }

    #[test]
    fn bsqi_empty() {
        assert_eq!(compute_bsqi(&ann(&[]), &ann(&[]), BSQI_TOLERANCE), 0.0);
    }

    #[test]
    fn bsqi_tolerance_boundary() {
        // 150 ms at 200 Hz is 30 samples.
        assert_eq!(compute_bsqi(&ann(&[100]), &ann(&[130]), BSQI_TOLERANCE), 1.0);
        assert_eq!(compute_bsqi(&ann(&[100]), &ann(&[131]), BSQI_TOLERANCE), 0.0);
    }

    #[test]
    fn bsqi_one_to_one() {
        // Two peaks of b compete for one of a; only the nearer matches.
        let q = compute_bsqi(&ann(&[100]), &ann(&[90, 105]), BSQI_TOLERANCE);
        assert!((q - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zeros_give_no_peaks() {
        let z = vec![0.0; 2000];
        assert!(detect_qrs(&z, 200).unwrap().is_empty());
        assert!(detect_qrs_secondary(&z, 200).unwrap().is_empty());
    }

    #[test]
    fn short_signal_rejected() {
        assert!(matches!(detect_qrs(&[0.0; 399], 200), Err(QrsError::TooShort { .. })));
        assert!(matches!(
            detect_qrs_secondary(&[0.0; 399], 200),
            Err(QrsError::TooShort { .. })
        ));
    }

    #[test]
    fn slice_reindexes() {
        let a = ann(&[5, 100, 250, 400]);
        assert_eq!(a.slice(100..400).r_peaks, vec![0, 150]);
    }

    #[test]
    fn local_peaks_respects_distance() {
        let x = [0.0, 1.0, 0.0, 2.0, 0.0, 0.5, 0.0];
        assert_eq!(local_peaks(&x, 3), vec![3]);
        assert_eq!(local_peaks(&x, 2), vec![1, 3, 5]);
    }
}
