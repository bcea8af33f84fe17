//! Parametric single-lead AF/NSR ECG simulator with a ground-truth f-wave
//! channel, and RMS error of extracted f-waves against that truth.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{qrs_mask, FwaveSignal};
use crate::filter::{filtfilt, Biquad};
use crate::record::{write_record, EcgRecord, Lead, RecordError, RhythmInterval, RhythmLabel, Sex, SignalFormat};
use crate::rng::{derive_seed, rng_for};

pub const MIN_DURATION: f64 = 60.0;
pub const TRUTH_FILE: &str = "truth.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LEAD_NAME: &str = "V1";

/// Mean AF and NSR episode length before rescaling, seconds.
const MEAN_EPISODE: f64 = 120.0;
const AF_RR_RANGE: (f64, f64) = (0.35, 1.8);
/// Power shares of baseline wander, muscle noise and electrode motion.
const NOISE_MIX: [f64; 3] = [0.3, 0.5, 0.2];
const MUSCLE_HIGHPASS: f64 = 5.0;
const MOTION_RATE_PER_MIN: f64 = 1.0;
/// Fundamental f-wave amplitude range, mV.
const FWAVE_AMP: (f64, f64) = (0.008, 0.03);
/// Lorentzian linewidth of the f-wave from phase diffusion, Hz.
const FWAVE_LINEWIDTH: f64 = 1.0;
/// Upper bounds of respiratory modulation depth for R, S, T amplitude and QRS width.
const MOD_DEPTH: [f64; 4] = [0.3, 0.4, 0.3, 0.15];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("no AF samples to evaluate")]
    NoAfSamples,
    #[error("extracted signal has {extracted} samples, truth has {truth}")]
    LengthMismatch { extracted: usize, truth: usize },
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub fs: u32,
    /// Seconds.
    pub duration: f64,
    pub af_burden: f64,
    /// Microvolts RMS of the added noise.
    pub noise_rms: f64,
    /// f-wave fundamental, Hz.
    pub f0: f64,
    pub n_harmonics: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            fs: 200,
            duration: 300.0,
            af_burden: 0.5,
            noise_rms: 0.0,
            f0: 6.0,
            n_harmonics: 3,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.fs < 50 {
            return bad(format!("fs = {} Hz is below 50 Hz", self.fs));
        }
        if self.duration.is_nan() || self.duration < MIN_DURATION {
            return bad(format!("duration {} s is shorter than {MIN_DURATION} s", self.duration));
        }
        if !(0.0..=1.0).contains(&self.af_burden) {
            return bad(format!("af_burden {} outside [0, 1]", self.af_burden));
        }
        if !self.noise_rms.is_finite() || self.noise_rms < 0.0 {
            return bad(format!("noise_rms {} must be a non-negative number", self.noise_rms));
        }
        if !(4.0..=9.0).contains(&self.f0) {
            return bad(format!("f0 {} Hz outside [4, 9]", self.f0));
        }
        if self.n_harmonics == 0 || self.f0 * self.n_harmonics as f64 >= self.fs as f64 / 2.0 {
            return bad(format!("{} harmonics of {} Hz do not fit below Nyquist", self.n_harmonics, self.f0));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.fs as f64).round() as usize
    }
}

/// Ground truth for a record or a slice of one.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// mV, zero outside AF.
    pub true_fwave: Vec<f64>,
    pub af_mask: Vec<bool>,
    pub true_r_peaks: Vec<usize>,
    pub fs: u32,
}

impl GroundTruth {
    /// Truth restricted to `range`, with R-peaks re-indexed.
    pub fn slice(&self, range: std::ops::Range<usize>) -> GroundTruth {
        GroundTruth {
            true_fwave: self.true_fwave[range.clone()].to_vec(),
            af_mask: self.af_mask[range.clone()].to_vec(),
            true_r_peaks: self
                .true_r_peaks
                .iter()
                .filter(|&&r| range.contains(&r))
                .map(|&r| r - range.start)
                .collect(),
            fs: self.fs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimRecord {
    pub config: SimConfig,
    /// mV.
    pub ecg: Vec<f64>,
    pub truth: GroundTruth,
    /// QRST complexes alone.
    pub ventricular: Vec<f64>,
    pub p_waves: Vec<f64>,
    pub noise: Vec<f64>,
    pub age: u32,
    pub sex: Sex,
}

impl SimRecord {
    pub fn len(&self) -> usize {
        self.ecg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ecg.is_empty()
    }

    pub fn af_fraction(&self) -> f64 {
        self.truth.af_mask.iter().filter(|&&m| m).count() as f64 / self.len().max(1) as f64
    }

    /// AF runs of the mask as annotation intervals, OTHER elsewhere.
    pub fn rhythm_intervals(&self) -> Vec<RhythmInterval> {
        let mask = &self.truth.af_mask;
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=mask.len() {
            if i == mask.len() || mask[i] != mask[start] {
                out.push(RhythmInterval {
                    start,
                    end: i,
                    label: if mask[start] { RhythmLabel::Af } else { RhythmLabel::Other },
                });
                start = i;
            }
        }
        out
    }

    pub fn to_record(&self, record_id: &str) -> EcgRecord {
        EcgRecord {
            record_id: record_id.to_string(),
            sampling_rate: self.config.fs,
            leads: vec![Lead {
                name: LEAD_NAME.to_string(),
                samples: self.ecg.clone(),
            }],
            rhythm_intervals: self.rhythm_intervals(),
            age: Some(self.age),
            sex: Some(self.sex),
        }
    }
}

/// Sum-of-Gaussians QRST and P-wave shape of one record, with the depth of
/// the respiratory modulation of each wave.
#[derive(Clone, Debug)]
struct Morphology {
    /// (offset from R in s, amplitude in mV, width in s)
    q: (f64, f64, f64),
    r: (f64, f64, f64),
    s: (f64, f64, f64),
    t: (f64, f64, f64),
    p: (f64, f64, f64),
    resp_freq: f64,
    resp_phase: f64,
    mod_r: f64,
    mod_s: f64,
    mod_t: f64,
    mod_width: f64,
    phase_s: f64,
    phase_t: f64,
    jitter: f64,
    /// Seconds of T-wave delay per second of RR above 0.8 s.
    t_rr_slope: f64,
}

impl Morphology {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let r_amp = rng.gen_range(0.8..1.6);
        Self {
            q: (rng.gen_range(-0.03..-0.02), -rng.gen_range(0.05..0.15), rng.gen_range(0.006..0.01)),
            r: (0.0, r_amp, rng.gen_range(0.009..0.014)),
            s: (rng.gen_range(0.025..0.035), -rng.gen_range(0.2..0.5), rng.gen_range(0.008..0.013)),
            t: (rng.gen_range(0.24..0.28), rng.gen_range(0.15..0.4), rng.gen_range(0.035..0.05)),
            p: (-rng.gen_range(0.15..0.18), rng.gen_range(0.08..0.18), rng.gen_range(0.015..0.025)),
            resp_freq: rng.gen_range(0.2..0.33),
            resp_phase: rng.gen_range(0.0..2.0 * PI),
            mod_r: rng.gen_range(0.5..1.0) * MOD_DEPTH[0],
            mod_s: rng.gen_range(0.5..1.0) * MOD_DEPTH[1],
            mod_t: rng.gen_range(0.5..1.0) * MOD_DEPTH[2],
            mod_width: rng.gen_range(0.5..1.0) * MOD_DEPTH[3],
            phase_s: rng.gen_range(0.3 * PI..0.7 * PI),
            phase_t: rng.gen_range(0.5 * PI..1.5 * PI),
            jitter: 0.02,
            t_rr_slope: rng.gen_range(0.02..0.06),
        }
    }

    /// Gaussian waves `(centre offset, amplitude, width)` of the beat at
    /// time `t` (s) preceded by an RR interval `rr`.
    fn beat(&self, t: f64, rr: f64, rng: &mut ChaCha8Rng) -> [(f64, f64, f64); 4] {
        let rho = 2.0 * PI * self.resp_freq * t + self.resp_phase;
        let jit = Normal::new(0.0, self.jitter).expect("valid sd");
        let mut j = || 1.0 + jit.sample(rng);
        let w = 1.0 + self.mod_width * rho.sin();
        let t_shift = (self.t_rr_slope * (rr - 0.8)).clamp(-0.03, 0.03);
        [
            (self.q.0 * w, self.q.1 * j(), self.q.2 * w),
            (self.r.0, self.r.1 * (1.0 + self.mod_r * rho.sin()) * j(), self.r.2 * w),
            (self.s.0 * w, self.s.1 * (1.0 + self.mod_s * (rho + self.phase_s).sin()) * j(), self.s.2 * w),
            (
                self.t.0 + t_shift,
                self.t.1 * (1.0 + self.mod_t * (rho + self.phase_t).sin()) * j(),
                self.t.2,
            ),
        ]
    }
}

fn add_gaussian(out: &mut [f64], fs: f64, centre: f64, amp: f64, width: f64) {
    let lo = ((centre - 5.0 * width) * fs).floor().max(0.0) as usize;
    let hi = (((centre + 5.0 * width) * fs).ceil().max(0.0) as usize).min(out.len());
    for (i, v) in out.iter_mut().enumerate().take(hi).skip(lo) {
        let z = (i as f64 / fs - centre) / width;
        *v += amp * (-0.5 * z * z).exp();
    }
}

/// Alternating rhythm episodes `(is_af, seconds)` covering `duration`, with
/// the AF share equal to `burden`.
fn episodes(burden: f64, duration: f64, rng: &mut ChaCha8Rng) -> Vec<(bool, f64)> {
    if burden <= 0.0 {
        return vec![(false, duration)];
    }
    if burden >= 1.0 {
        return vec![(true, duration)];
    }
    let exp = Exp::new(1.0 / MEAN_EPISODE).expect("positive rate");
    let mut af = rng.gen_bool(burden);
    let mut eps = Vec::new();
    let mut total = 0.0;
    while total < duration || eps.len() < 2 {
        let len = exp.sample(rng).max(1.0);
        eps.push((af, len));
        total += len;
        af = !af;
    }
    let af_total: f64 = eps.iter().filter(|e| e.0).map(|e| e.1).sum();
    let nsr_total = total - af_total;
    for e in &mut eps {
        e.1 *= if e.0 { burden * duration / af_total } else { (1.0 - burden) * duration / nsr_total };
    }
    eps
}

/// f-wave: harmonics with amplitudes ∝ 1/i, slow amplitude and frequency
/// modulation, and phase diffusion.
fn fwave(cfg: &SimConfig, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = cfg.fs as f64;
    let amp = rng.gen_range(FWAVE_AMP.0..FWAVE_AMP.1);
    let diffusion = (2.0 * PI * FWAVE_LINEWIDTH / fs).sqrt();
    let walk = Normal::new(0.0, 1.0).expect("unit normal");
    let fm_freq = rng.gen_range(0.05..0.15);
    let fm_depth = rng.gen_range(0.01..0.03);
    let am_freq = rng.gen_range(0.1..0.3);
    let am_depth = rng.gen_range(0.1..0.3);
    let (p0, p1) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let phases: Vec<f64> = (0..cfg.n_harmonics).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let mut phase = rng.gen_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let a = amp * (1.0 + am_depth * (2.0 * PI * am_freq * t + p1).sin());
            let v = phases
                .iter()
                .enumerate()
                .map(|(h, th)| {
                    let k = (h + 1) as f64;
                    (k * phase + th).sin() / k
                })
                .sum::<f64>();
            phase += 2.0 * PI * cfg.f0 * (1.0 + fm_depth * (2.0 * PI * fm_freq * t + p0).sin()) / fs
                + diffusion * walk.sample(rng);
            a * v
        })
        .collect()
}

fn unit_rms(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// Baseline wander, high-passed white noise and electrode-motion
/// transients, mixed and scaled to `rms_mv`.
fn noise(fs: f64, n: usize, rms_mv: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rms_mv == 0.0 {
        return vec![0.0; n];
    }
    let wander: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| (rng.gen_range(0.05..0.45), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.5..1.0)))
        .collect();
    let baseline = unit_rms(
        (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                wander.iter().map(|(f, p, a)| a * (2.0 * PI * f * t + p).sin()).sum()
            })
            .collect(),
    );

    let white: Vec<f64> = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let muscle = unit_rms(filtfilt(&[Biquad::highpass(MUSCLE_HIGHPASS, fs)], &white));

    let duration_min = n as f64 / fs / 60.0;
    let events = Poisson::new(MOTION_RATE_PER_MIN * duration_min)
        .map(|p| p.sample(rng) as usize)
        .unwrap_or(0);
    let mut motion = vec![0.0; n];
    for _ in 0..events {
        let onset = rng.gen_range(0.0..n as f64 / fs);
        let height = rng.gen_range(0.5..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let rise = rng.gen_range(0.05..0.15);
        let decay = rng.gen_range(0.5..2.0);
        for (i, v) in motion.iter_mut().enumerate() {
            let dt = i as f64 / fs - onset;
            if dt < -6.0 * rise {
                continue;
            }
            let step = 1.0 / (1.0 + (-dt / rise).exp());
            *v += height * step * (-dt.max(0.0) / decay).exp();
        }
    }
    let motion = unit_rms(motion);

    let mut mixed: Vec<f64> = (0..n)
        .map(|i| {
            NOISE_MIX[0].sqrt() * baseline[i] + NOISE_MIX[1].sqrt() * muscle[i] + NOISE_MIX[2].sqrt() * motion[i]
        })
        .collect();
    let rms = (mixed.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    mixed.iter_mut().for_each(|v| *v *= rms_mv / rms);
    mixed
}

/// R-peak times (s) and rhythm of each beat.
fn beat_times(eps: &[(bool, f64)], duration: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, bool)> {
    let mut bounds = Vec::with_capacity(eps.len());
    let mut acc = 0.0;
    for &(af, len) in eps {
        acc += len;
        bounds.push((acc, af));
    }
    let rhythm_at = |t: f64| bounds.iter().find(|b| t < b.0).map_or(bounds.last().unwrap().1, |b| b.1);

    let nsr_mean = rng.gen_range(0.75..1.05);
    let nsr_resp = rng.gen_range(0.02..0.04);
    let resp_freq = rng.gen_range(0.2..0.33);
    let af_sigma = rng.gen_range(0.18..0.25);
    let jitter = Normal::new(0.0, 0.01).expect("valid sd");

    let mut out = Vec::new();
    let mut t = rng.gen_range(0.3..0.8);
    let mut af_mean = None;
    let mut last_af = None;
    while t < duration - 0.3 {
        let af = rhythm_at(t);
        out.push((t, af));
        if last_af != Some(af) {
            af_mean = af.then(|| rng.gen_range(0.6..1.0));
            last_af = Some(af);
        }
        let rr = match af_mean {
            Some(mean) => {
                let ln = LogNormal::new(f64::ln(mean) - af_sigma * af_sigma / 2.0, af_sigma).expect("valid");
                ln.sample(rng).clamp(AF_RR_RANGE.0, AF_RR_RANGE.1)
            }
            None => nsr_mean * (1.0 + nsr_resp * (2.0 * PI * resp_freq * t).sin() + jitter.sample(rng)),
        };
        t += rr;
    }
    out
}

pub fn simulate_record(cfg: &SimConfig) -> Result<SimRecord, SimError> {
    cfg.validate()?;
    let fs = cfg.fs as f64;
    let n = cfg.n_samples();
    let mut rng_rhythm = rng_for(cfg.seed, &[0]);
    let mut rng_morph = rng_for(cfg.seed, &[1]);
    let mut rng_fwave = rng_for(cfg.seed, &[2]);
    let mut rng_noise = rng_for(cfg.seed, &[3]);
    let mut rng_meta = rng_for(cfg.seed, &[4]);

    let eps = episodes(cfg.af_burden, cfg.duration, &mut rng_rhythm);
    let beats = beat_times(&eps, cfg.duration, &mut rng_rhythm);
    let morph = Morphology::draw(&mut rng_morph);

    let mut ventricular = vec![0.0; n];
    let mut p_waves = vec![0.0; n];
    let mut r_peaks = Vec::with_capacity(beats.len());
    let mut af_mask = vec![false; n];
    for (k, &(t, af)) in beats.iter().enumerate() {
        let rr = if k > 0 { t - beats[k - 1].0 } else { 0.8 };
        for (off, amp, width) in morph.beat(t, rr, &mut rng_morph) {
            add_gaussian(&mut ventricular, fs, t + off, amp, width);
        }
        if !af {
            let (off, amp, width) = morph.p;
            add_gaussian(&mut p_waves, fs, t + off, amp, width);
        }
        r_peaks.push(((t * fs).round() as usize).min(n - 1));
        // The beat owns the samples between the midpoints to its neighbours.
        let lo = if k == 0 { 0.0 } else { 0.5 * (beats[k - 1].0 + t) };
        let hi = beats.get(k + 1).map_or(cfg.duration, |b| 0.5 * (t + b.0));
        let (lo, hi) = (((lo * fs).round() as usize).min(n), ((hi * fs).round() as usize).min(n));
        af_mask[lo..hi].iter_mut().for_each(|m| *m = af);
    }

    let f = fwave(cfg, n, &mut rng_fwave);
    let true_fwave: Vec<f64> = f.iter().zip(&af_mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
    let noise = noise(fs, n, cfg.noise_rms / 1000.0, &mut rng_noise);
    let ecg = (0..n).map(|i| ventricular[i] + p_waves[i] + true_fwave[i] + noise[i]).collect();

    Ok(SimRecord {
        config: cfg.clone(),
        ecg,
        truth: GroundTruth {
            true_fwave,
            af_mask,
            true_r_peaks: r_peaks,
            fs: cfg.fs,
        },
        ventricular,
        p_waves,
        noise,
        age: rng_meta.gen_range(30..=90),
        sex: if rng_meta.gen_bool(0.5) { Sex::F } else { Sex::M },
    })
}

/// RMS error in µV inside and outside the true QRS intervals over AF
/// samples. `None` where a region holds no AF samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsError {
    pub inside_qrs: Option<f64>,
    pub outside_qrs: Option<f64>,
    pub n_inside: usize,
    pub n_outside: usize,
}

pub fn rms_error(extracted: &FwaveSignal, truth: &GroundTruth) -> Result<RmsError, SimError> {
    if extracted.len() != truth.true_fwave.len() {
        return Err(SimError::LengthMismatch {
            extracted: extracted.len(),
            truth: truth.true_fwave.len(),
        });
    }
    let inside = qrs_mask(extracted.len(), &truth.true_r_peaks, truth.fs);
    let (mut si, mut so, mut ni, mut no) = (0.0, 0.0, 0usize, 0usize);
    for (i, &in_qrs) in inside.iter().enumerate() {
        if !truth.af_mask[i] {
            continue;
        }
        let e = (extracted.d[i] - truth.true_fwave[i]) * 1000.0;
        if in_qrs {
            si += e * e;
            ni += 1;
        } else {
            so += e * e;
            no += 1;
        }
    }
    if ni + no == 0 {
        return Err(SimError::NoAfSamples);
    }
    let rms = |s: f64, n: usize| (n > 0).then(|| (s / n as f64).sqrt());
    Ok(RmsError {
        inside_qrs: rms(si, ni),
        outside_qrs: rms(so, no),
        n_inside: ni,
        n_outside: no,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub record_id: String,
    pub seed: u64,
    pub af_burden: f64,
    pub f0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_records: usize,
    pub noise_rms: f64,
    pub master_seed: u64,
    pub duration: f64,
    pub fs: u32,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_records: 100,
            noise_rms: 100.0,
            master_seed: 1,
            duration: 300.0,
            fs: 200,
        }
    }
}

pub fn record_id(index: usize) -> String {
    format!("sim{index:04}")
}

/// Per-record configs: burden uniform on `[0, 1]`, f0 uniform on `[4, 9]`.
pub fn dataset_configs(spec: &DatasetSpec) -> Result<Vec<(DatasetEntry, SimConfig)>, SimError> {
    if spec.n_records == 0 {
        return Err(SimError::InvalidConfig("n_records must be at least 1".into()));
    }
    (0..spec.n_records)
        .map(|i| {
            let mut rng = rng_for(spec.master_seed, &[i as u64]);
            let cfg = SimConfig {
                fs: spec.fs,
                duration: spec.duration,
                af_burden: rng.gen_range(0.0..=1.0),
                noise_rms: spec.noise_rms,
                f0: rng.gen_range(4.0..=9.0),
                n_harmonics: 3,
                seed: derive_seed(spec.master_seed, &[i as u64, 1]),
            };
            cfg.validate()?;
            Ok((
                DatasetEntry {
                    record_id: record_id(i),
                    seed: cfg.seed,
                    af_burden: cfg.af_burden,
                    f0: cfg.f0,
                },
                cfg,
            ))
        })
        .collect()
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<(DatasetEntry, SimRecord)>, SimError> {
    use rayon::prelude::*;
    dataset_configs(spec)?
        .into_par_iter()
        .map(|(e, cfg)| Ok((e, simulate_record(&cfg)?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub spec: DatasetSpec,
    pub records: Vec<DatasetEntry>,
}

/// Writes `truth.csv` with columns `true_fwave,af_mask,r_peak`.
pub fn write_truth(rec: &SimRecord, dir: &Path) -> Result<(), SimError> {
    let path = dir.join(TRUTH_FILE);
    let mut out = String::with_capacity(rec.len() * 16);
    out.push_str("true_fwave,af_mask,r_peak\n");
    let mut peaks = rec.truth.true_r_peaks.iter().peekable();
    for i in 0..rec.len() {
        let mut is_peak = 0;
        while peaks.peek().is_some_and(|&&p| p <= i) {
            if *peaks.next().unwrap() == i {
                is_peak = 1;
            }
        }
        out.push_str(&format!("{},{},{}\n", rec.truth.true_fwave[i], u8::from(rec.truth.af_mask[i]), is_peak));
    }
    fs::write(&path, out).map_err(io_err(&path))
}

pub fn read_truth(dir: &Path, fs: u32) -> Result<GroundTruth, SimError> {
    let path = dir.join(TRUTH_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let bad = |line: usize| {
        SimError::Record(RecordError::Malformed {
            file: path.clone(),
            reason: format!("line {line}"),
        })
    };
    let mut truth = GroundTruth {
        true_fwave: Vec::new(),
        af_mask: Vec::new(),
        true_r_peaks: Vec::new(),
        fs,
    };
    for (i, line) in text.lines().enumerate().skip(1) {
        let mut cols = line.split(',');
        let (Some(f), Some(m), Some(r), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
            return Err(bad(i + 1));
        };
        truth.true_fwave.push(f.parse().map_err(|_| bad(i + 1))?);
        truth.af_mask.push(m == "1");
        if r == "1" {
            truth.true_r_peaks.push(i - 1);
        }
    }
    Ok(truth)
}

/// Writes every record directory, its truth file and `manifest.json`.
pub fn write_dataset(spec: &DatasetSpec, records: &[(DatasetEntry, SimRecord)], dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (entry, rec) in records {
        let rdir = dir.join(&entry.record_id);
        write_record(&rec.to_record(&entry.record_id), &rdir, SignalFormat::Csv)?;
        write_truth(rec, &rdir)?;
    }
    let manifest = DatasetManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        spec: spec.clone(),
        records: records.iter().map(|(e, _)| e.clone()).collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    writeln!(f, "{text}").map_err(io_err(&path))
}
