//! The five f-wave features: peak-to-peak amplitude outside QRS intervals,
//! dominant atrial frequency and its magnitude, and Welch power inside and
//! outside the 4–12 Hz atrial band.

use std::io::{Read, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{FwaveSignal, Method};
use crate::record::WindowLabel;

/// Lower edge of the atrial band, Hz.
pub const BAND_LOW: f64 = 4.0;
/// Upper edge of the atrial band, Hz.
pub const BAND_HIGH: f64 = 12.0;
/// Default Welch segment length in samples.
pub const DEFAULT_SEGMENT_LEN: usize = 1024;

pub const FEATURE_NAMES: [&str; 5] = ["a_pp", "daf", "p_daf", "p_in", "p_out"];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("signal of {len} samples is shorter than one {segment}-sample segment")]
    TooShort { len: usize, segment: usize },
    #[error("segment length must be at least 2")]
    BadSegment,
    #[error("feature table: {0}")]
    Table(#[from] csv::Error),
}

/// One-sided Welch power spectral density.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSpectrum {
    pub frequencies: Vec<f64>,
    pub density: Vec<f64>,
    pub segment_len: usize,
    pub overlap: f64,
    pub fs: f64,
}

impl PowerSpectrum {
    pub fn bin_width(&self) -> f64 {
        self.fs / self.segment_len as f64
    }

    /// Integral of the piecewise-linear interpolant of the density over
    /// `[lo, hi]`. Over the whole grid this is the trapezoidal rule.
    pub fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let f = &self.frequencies;
        let p = &self.density;
        let mut area = 0.0;
        for k in 0..f.len().saturating_sub(1) {
            let a = f[k].max(lo);
            let b = f[k + 1].min(hi);
            if b <= a {
                continue;
            }
            let slope = (p[k + 1] - p[k]) / (f[k + 1] - f[k]);
            let pa = p[k] + slope * (a - f[k]);
            let pb = p[k] + slope * (b - f[k]);
            area += 0.5 * (b - a) * (pa + pb);
        }
        area
    }

    pub fn total_power(&self) -> f64 {
        self.integrate(0.0, self.fs / 2.0)
    }
}

fn hamming(n: usize) -> Vec<f64> {
    // Periodic form, as used for spectral analysis.
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Welch estimate with a Hamming window and 50 % overlap, scaled as a
/// density so that its integral over `[0, fs/2]` matches the mean power.
pub fn welch(samples: &[f64], fs: f64, segment_len: usize) -> Result<PowerSpectrum, FeatureError> {
    if segment_len < 2 {
        return Err(FeatureError::BadSegment);
    }
    if samples.len() < segment_len {
        return Err(FeatureError::TooShort {
            len: samples.len(),
            segment: segment_len,
        });
    }
    let window = hamming(segment_len);
    let w_energy: f64 = window.iter().map(|w| w * w).sum();
    let step = segment_len / 2;
    let n_seg = (samples.len() - segment_len) / step + 1;
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(segment_len);
    let n_bins = segment_len / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); segment_len];
    for s in 0..n_seg {
        let seg = &samples[s * step..s * step + segment_len];
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
    }
    let scale = 1.0 / (fs * w_energy * n_seg as f64);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let one_sided = if k == 0 || (segment_len.is_multiple_of(2) && k == n_bins - 1) {
                1.0
            } else {
                2.0
            };
            v * scale * one_sided
        })
        .collect();
    let frequencies = (0..n_bins).map(|k| k as f64 * fs / segment_len as f64).collect();
    Ok(PowerSpectrum {
        frequencies,
        density,
        segment_len,
        overlap: 0.5,
        fs,
    })
}

/// Welch spectrum of the full extracted signal, QRS intervals included.
pub fn welch_psd(d: &FwaveSignal, segment_len: usize) -> Result<PowerSpectrum, FeatureError> {
    welch(&d.d, d.fs as f64, segment_len)
}

/// Peak-to-peak amplitude over Ω_f; `None` when every sample is masked.
pub fn compute_app(d: &FwaveSignal) -> Option<f64> {
    let mut it = d.outside_qrs();
    let first = it.next()?;
    let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Some(hi - lo)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralFeatures {
    pub daf: f64,
    pub p_daf: f64,
    pub p_in: f64,
    pub p_out: f64,
}

/// Dominant frequency in `[4, 12]` Hz (lowest bin on ties), its density,
/// and the band / out-of-band integrals.
pub fn compute_spectral_features(psd: &PowerSpectrum) -> SpectralFeatures {
    let mut best: Option<usize> = None;
    for (k, &f) in psd.frequencies.iter().enumerate() {
        if !(BAND_LOW..=BAND_HIGH).contains(&f) {
            continue;
        }
        if best.is_none_or(|b| psd.density[k] > psd.density[b]) {
            best = Some(k);
        }
    }
    // Coarse grids with no bin inside the band use the bin nearest its centre.
    let k = best.unwrap_or_else(|| {
        let centre = 0.5 * (BAND_LOW + BAND_HIGH);
        (0..psd.frequencies.len())
            .min_by(|&a, &b| {
                (psd.frequencies[a] - centre)
                    .abs()
                    .total_cmp(&(psd.frequencies[b] - centre).abs())
            })
            .unwrap_or(0)
    });
    let nyquist = psd.fs / 2.0;
    SpectralFeatures {
        daf: psd.frequencies.get(k).copied().unwrap_or(0.0),
        p_daf: psd.density.get(k).copied().unwrap_or(0.0),
        p_in: psd.integrate(BAND_LOW, BAND_HIGH),
        p_out: psd.integrate(0.0, BAND_LOW) + psd.integrate(BAND_HIGH, nyquist),
    }
}

/// Identity of the window a feature row came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowId {
    pub record_id: String,
    pub lead: String,
    pub window_idx: usize,
}

/// One row of the feature table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub record_id: String,
    pub lead: String,
    pub window_idx: usize,
    pub method: Method,
    pub label: WindowLabel,
    #[serde(with = "optional_float")]
    pub a_pp: Option<f64>,
    pub daf: f64,
    pub p_daf: f64,
    pub p_in: f64,
    pub p_out: f64,
}

impl FeatureVector {
    pub fn window_id(&self) -> WindowId {
        WindowId {
            record_id: self.record_id.clone(),
            lead: self.lead.clone(),
            window_idx: self.window_idx,
        }
    }

    /// Feature values in [`FEATURE_NAMES`] order; `None` if any is missing.
    pub fn values(&self) -> Option<[f64; 5]> {
        Some([self.a_pp?, self.daf, self.p_daf, self.p_in, self.p_out])
    }
}

mod optional_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("NA"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let s = String::deserialize(d)?;
        if s == "NA" || s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(serde::de::Error::custom)
    }
}

/// All five features for one extracted window.
pub fn featurize_window(
    d: &FwaveSignal,
    id: &WindowId,
    label: WindowLabel,
    segment_len: usize,
) -> Result<FeatureVector, FeatureError> {
    let psd = welch_psd(d, segment_len)?;
    let s = compute_spectral_features(&psd);
    Ok(FeatureVector {
        record_id: id.record_id.clone(),
        lead: id.lead.clone(),
        window_idx: id.window_idx,
        method: d.method,
        label,
        a_pp: compute_app(d),
        daf: s.daf,
        p_daf: s.p_daf,
        p_in: s.p_in,
        p_out: s.p_out,
    })
}

/// Writes rows as CSV with columns
/// `record_id,lead,window_idx,method,label,a_pp,daf,p_daf,p_in,p_out`.
pub fn write_feature_table<W: Write>(out: W, rows: &[FeatureVector]) -> Result<(), FeatureError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "record_id", "lead", "window_idx", "method", "label", "a_pp", "daf", "p_daf", "p_in", "p_out",
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_feature_table<R: Read>(input: R) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qrs::QrsAnnotations;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const FS: f64 = 200.0;

    fn signal(d: Vec<f64>, peaks: &[usize]) -> FwaveSignal {
        FwaveSignal::new(
            Method::Abs,
            d,
            &QrsAnnotations {
                r_peaks: peaks.to_vec(),
                fs: FS as u32,
            },
        )
    }

    fn sine(f: f64, amp: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / FS).sin()).collect()
    }

    #[test]
    fn app_of_sine() {
        // At 200 Hz a 6 Hz sine lands on its crest at sample 75 and its
        // trough at sample 25.
        let x = sine(6.0, 0.5, 12_000);
        assert_eq!(compute_app(&signal(x.clone(), &[])), Some(1.0));
        let mut spiked = x;
        spiked[3_000] += 10.0;
        assert_eq!(compute_app(&signal(spiked, &[3_005])), Some(1.0));
    }

    #[test]
    fn app_of_constant_and_fully_masked() {
        assert_eq!(compute_app(&signal(vec![0.3; 500], &[])), Some(0.0));
        let peaks: Vec<usize> = (0..20).map(|i| i * 30).collect();
        assert_eq!(compute_app(&signal(vec![1.0; 580], &peaks)), None);
    }

    #[test]
    fn welch_parseval_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..12_000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let psd = welch(&x, FS, 1024).unwrap();
        assert!((psd.total_power() / var - 1.0).abs() < 0.1);
        let s = compute_spectral_features(&psd);
        let ratio = s.p_in / (s.p_in + s.p_out);
        assert!((ratio / 0.08 - 1.0).abs() < 0.15, "{ratio}");
    }

    #[test]
    fn tone_dominates() {
        let psd = welch(&sine(7.0, 1.0, 12_000), FS, 1024).unwrap();
        let s = compute_spectral_features(&psd);
        assert!((s.daf - 7.0).abs() <= psd.bin_width());
        assert!(s.p_out / s.p_in < 0.05);
        assert!(psd.density.iter().all(|&p| p >= 0.0));
        assert_eq!(psd.frequencies.first(), Some(&0.0));
        assert_eq!(psd.frequencies.last(), Some(&100.0));
    }

    #[test]
    fn out_of_band_tone() {
        let psd = welch(&sine(2.0, 1.0, 12_000), FS, 1024).unwrap();
        let s = compute_spectral_features(&psd);
        assert!((BAND_LOW..=BAND_HIGH).contains(&s.daf));
        let k = psd.frequencies.iter().position(|&f| f == s.daf).unwrap();
        let in_band_max = psd
            .frequencies
            .iter()
            .zip(&psd.density)
            .filter(|(f, _)| (BAND_LOW..=BAND_HIGH).contains(*f))
            .fold(0.0f64, |m, (_, &p)| m.max(p));
        assert_eq!(psd.density[k], in_band_max);
        assert!(s.p_in < 1e-3 * psd.total_power());
        assert!((s.p_out / psd.total_power() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn zero_signal_zero_spectrum() {
        let psd = welch(&vec![0.0; 4096], FS, 1024).unwrap();
        assert!(psd.density.iter().all(|&p| p == 0.0));
        let s = compute_spectral_features(&psd);
        assert_eq!(s.daf, psd.frequencies.iter().copied().find(|&f| f >= BAND_LOW).unwrap());
    }

    #[test]
    fn too_short() {
        assert!(matches!(welch(&[0.0; 100], FS, 1024), Err(FeatureError::TooShort { .. })));
    }

    #[test]
    fn band_split_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..6_000).map(|_| rng.gen::<f64>() - 0.5).collect();
        let psd = welch(&x, FS, 1024).unwrap();
        let s = compute_spectral_features(&psd);
        let trapz: f64 = psd
            .density
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]) * psd.bin_width())
            .sum();
        assert!(((s.p_in + s.p_out) / trapz - 1.0).abs() < 1e-9);
    }

    #[test]
    fn table_round_trip() {
        let rows = vec![FeatureVector {
            record_id: "rec_0001".into(),
            lead: "V1".into(),
            window_idx: 3,
            method: Method::TsPca,
            label: WindowLabel::Af,
            a_pp: None,
            daf: 6.25,
            p_daf: 0.001,
            p_in: 0.5,
            p_out: 1e-7,
        }];
        let mut buf = Vec::new();
        write_feature_table(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("record_id,lead,window_idx,method,label,a_pp,daf,p_daf,p_in,p_out\n"));
        assert!(text.contains("TS_PCA,AF,NA,"));
        assert_eq!(read_feature_table(&buf[..]).unwrap(), rows);
    }
}
