//! Single-lead f-wave extraction by QRST cancellation.
//!
//! Four cancellers share one beat ensemble ([`BeatMatrix`]):
//!
//! * [`Method::Abs`]: subtract the ensemble-average QRST template.
//! * [`Method::AbsSc1`]: scale the whole template per beat (least squares).
//! * [`Method::AbsSc2`]: scale QRS and T segments separately, joined by a
//!   short linear crossfade.
//! * [`Method::TsPca`]: rebuild each beat from the mean plus its projection
//!   on the leading principal components of the ensemble.
//!
//! Every method only touches samples inside beat spans; everything else in
//! the window is passed through unchanged.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qrs::QrsAnnotations;

/// Half-width of the QRS interval around each R-peak, in seconds.
pub const QRS_HALF_WIDTH: f64 = 0.09;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("need at least 2 beats, found {0}")]
    TooFewBeats(usize),
    #[error("unknown extraction method {0:?}")]
    UnknownMethod(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ABS")]
    Abs,
    #[serde(rename = "ABS_sc1")]
    AbsSc1,
    #[serde(rename = "ABS_sc2")]
    AbsSc2,
    #[serde(rename = "TS_PCA")]
    TsPca,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Abs, Method::AbsSc1, Method::AbsSc2, Method::TsPca];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Abs => "ABS",
            Method::AbsSc1 => "ABS_sc1",
            Method::AbsSc2 => "ABS_sc2",
            Method::TsPca => "TS_PCA",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = ExtractError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ExtractError::UnknownMethod(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractParams {
    /// Beat span before the R-peak, seconds.
    pub beat_pre: f64,
    /// Beat span after the R-peak, seconds.
    pub beat_post: f64,
    /// Largest alignment shift in samples.
    pub max_shift: usize,
    /// Least-squares scale factors are clamped to `[0, max_scale]`.
    pub max_scale: f64,
    /// Crossfade between the QRS and T scale factors, seconds.
    pub crossfade: f64,
    /// Cumulative explained variance that selects the PCA rank.
    pub pca_variance: f64,
    /// Upper bound on the PCA rank.
    pub pca_max_components: usize,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self {
            beat_pre: 0.25,
            beat_post: 0.45,
            max_shift: 10,
            max_scale: 3.0,
            crossfade: 0.02,
            pca_variance: 0.9,
            pca_max_components: 3,
        }
    }
}

/// Extracted atrial signal for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct FwaveSignal {
    /// Method requested by the caller.
    pub method: Method,
    /// Method actually applied; differs from `method` on fallback.
    pub applied: Method,
    pub d: Vec<f64>,
    /// True within ±90 ms of a detected R-peak.
    pub qrs_mask: Vec<bool>,
    pub r_peaks: Vec<usize>,
    pub fs: u32,
}

impl FwaveSignal {
    /// Wraps a raw signal with a QRS mask built from `qrs`.
    pub fn new(method: Method, d: Vec<f64>, qrs: &QrsAnnotations) -> Self {
        let qrs_mask = qrs_mask(d.len(), &qrs.r_peaks, qrs.fs);
        Self {
            method,
            applied: method,
            d,
            qrs_mask,
            r_peaks: qrs.r_peaks.clone(),
            fs: qrs.fs,
        }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Samples of Ω_f, outside every QRS interval.
    pub fn outside_qrs(&self) -> impl Iterator<Item = f64> + '_ {
        self.d
            .iter()
            .zip(&self.qrs_mask)
            .filter(|(_, &m)| !m)
            .map(|(&v, _)| v)
    }
}

/// Mask of samples within ±90 ms (inclusive) of any peak.
pub fn qrs_mask(len: usize, r_peaks: &[usize], fs: u32) -> Vec<bool> {
    let half = (QRS_HALF_WIDTH * fs as f64).round() as usize;
    let mut mask = vec![false; len];
    for &r in r_peaks {
        let lo = r.saturating_sub(half).min(len);
        let hi = (r + half + 1).min(len);
        mask[lo..hi].fill(true);
    }
    mask
}

/// Aligned ensemble of cardiac cycles cut from one window.
#[derive(Clone, Debug, PartialEq)]
pub struct BeatMatrix {
    /// B rows of L samples; absent samples are zero.
    pub beats: Vec<Vec<f64>>,
    /// Present sample range of each row, `lo..hi` in row coordinates.
    pub spans: Vec<(usize, usize)>,
    /// Row index of the R-peak.
    pub r_offset: usize,
    /// Aligned R-peak positions in window samples.
    pub r_positions: Vec<usize>,
    pub shifts: Vec<i64>,
    pub fs: u32,
}

impl BeatMatrix {
    pub fn n_beats(&self) -> usize {
        self.beats.len()
    }

    pub fn beat_len(&self) -> usize {
        self.beats.first().map_or(0, Vec::len)
    }

    /// Window index of row `b`, column `j`.
    fn window_index(&self, b: usize, j: usize) -> usize {
        self.r_positions[b] + j - self.r_offset
    }

    /// Per-sample mean over present beats; zero where no beat is present.
    pub fn template(&self) -> Vec<f64> {
        let l = self.beat_len();
        let mut sum = vec![0.0; l];
        let mut count = vec![0usize; l];
        for (row, &(lo, hi)) in self.beats.iter().zip(&self.spans) {
            for j in lo..hi {
                sum[j] += row[j];
                count[j] += 1;
            }
        }
        sum.iter()
            .zip(&count)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect()
    }
}

/// Present range of a beat centred at `r`, clipped to the window and to the
/// midpoints towards its neighbours. Returned in row coordinates.
fn beat_spans(positions: &[usize], n: usize, pre: usize, post: usize) -> Vec<(usize, usize)> {
    let mid = |a: usize, b: usize| (a + b).div_ceil(2);
    (0..positions.len())
        .map(|b| {
            let r = positions[b];
            let mut lo = r as i64 - pre as i64;
            let mut hi = (r + post) as i64;
            lo = lo.max(0);
            hi = hi.min(n as i64);
            if b > 0 {
                lo = lo.max(mid(positions[b - 1], r) as i64);
            }
            if b + 1 < positions.len() {
                hi = hi.min(mid(r, positions[b + 1]) as i64);
            }
            let origin = r as i64 - pre as i64;
            let lo_j = (lo - origin).max(0) as usize;
            let hi_j = (hi - origin).max(lo - origin).max(0) as usize;
            (lo_j, hi_j.min(pre + post))
        })
        .collect()
}

fn cut_beats(signal: &[f64], positions: &[usize], pre: usize, post: usize) -> (Vec<Vec<f64>>, Vec<(usize, usize)>) {
    let spans = beat_spans(positions, signal.len(), pre, post);
    let beats = positions
        .iter()
        .zip(&spans)
        .map(|(&r, &(lo, hi))| {
            let mut row = vec![0.0; pre + post];
            for j in lo..hi {
                row[j] = signal[r + j - pre];
            }
            row
        })
        .collect();
    (beats, spans)
}

/// Cuts beats around each R-peak and aligns each one to the ensemble
/// template by normalised cross-correlation within `±max_shift` samples.
pub fn build_beat_matrix(
    signal: &[f64],
    qrs: &QrsAnnotations,
    params: &ExtractParams,
) -> Result<BeatMatrix, ExtractError> {
    let n = signal.len();
    let peaks: Vec<usize> = qrs.r_peaks.iter().copied().filter(|&p| p < n).collect();
    if peaks.len() < 2 {
        return Err(ExtractError::TooFewBeats(peaks.len()));
    }
    let fs = qrs.fs as f64;
    let pre = (params.beat_pre * fs).round() as usize;
    let post = (params.beat_post * fs).round() as usize;

    let (beats, spans) = cut_beats(signal, &peaks, pre, post);
    let rough = BeatMatrix {
        beats,
        spans,
        r_offset: pre,
        r_positions: peaks.clone(),
        shifts: vec![0; peaks.len()],
        fs: qrs.fs,
    };
    let template = rough.template();

    let max_shift = params.max_shift as i64;
    let mut order: Vec<i64> = vec![0];
    for s in 1..=max_shift {
        order.extend([-s, s]);
    }
    let mut shifts = Vec::with_capacity(peaks.len());
    let mut positions = Vec::with_capacity(peaks.len());
    for (b, &r) in peaks.iter().enumerate() {
        let (lo, hi) = rough.spans[b];
        let mut best: Option<(i64, f64)> = None;
        for &s in &order {
            let origin = r as i64 + s - pre as i64;
            let mut dot = 0.0;
            let mut energy = 0.0;
            for (j, &t) in template.iter().enumerate().take(hi).skip(lo) {
                let i = origin + j as i64;
                if i < 0 || i >= n as i64 {
                    continue;
                }
                let v = signal[i as usize];
                dot += v * t;
                energy += v * v;
            }
            let score = if energy > 0.0 { dot / energy.sqrt() } else { 0.0 };
            match best {
                Some((_, b)) if score <= b + 1e-12 * b.abs() => {}
                _ => best = Some((s, score)),
            }
        }
        let best_shift = best.map_or(0, |(s, _)| s);
        let pos = (r as i64 + best_shift).clamp(0, n as i64 - 1) as usize;
        shifts.push(pos as i64 - r as i64);
        positions.push(pos);
    }
    // Shifts must not reorder beats.
    for b in 1..positions.len() {
        if positions[b] <= positions[b - 1] {
            positions[b] = peaks[b];
            shifts[b] = 0;
        }
    }

    let (beats, spans) = cut_beats(signal, &positions, pre, post);
    Ok(BeatMatrix {
        beats,
        spans,
        r_offset: pre,
        r_positions: positions,
        shifts,
        fs: qrs.fs,
    })
}

fn subtract_fitted(signal: &[f64], matrix: &BeatMatrix, fitted: &[Vec<f64>]) -> Vec<f64> {
    let mut d = signal.to_vec();
    for (b, &(lo, hi)) in matrix.spans.iter().enumerate() {
        for j in lo..hi {
            d[matrix.window_index(b, j)] -= fitted[b][j];
        }
    }
    d
}

fn finish(method: Method, applied: Method, d: Vec<f64>, qrs: &QrsAnnotations) -> FwaveSignal {
    FwaveSignal {
        applied,
        ..FwaveSignal::new(method, d, qrs)
    }
}

/// Least-squares scale of `template` onto `row` over `range`.
fn ls_scale(row: &[f64], template: &[f64], range: std::ops::Range<usize>, max_scale: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in range {
        num += row[j] * template[j];
        den += template[j] * template[j];
    }
    if den > 0.0 {
        (num / den).clamp(0.0, max_scale)
    } else {
        1.0
    }
}

/// Per-beat whole-template scale factors.
pub fn sc1_scales(matrix: &BeatMatrix, params: &ExtractParams) -> Vec<f64> {
    let t = matrix.template();
    matrix
        .beats
        .iter()
        .zip(&matrix.spans)
        .map(|(row, &(lo, hi))| ls_scale(row, &t, lo..hi, params.max_scale))
        .collect()
}

/// QRS segment `[R-90 ms, R+90 ms]` in row coordinates, inclusive.
fn qrs_segment(matrix: &BeatMatrix) -> (usize, usize) {
    let half = (QRS_HALF_WIDTH * matrix.fs as f64).round() as usize;
    let lo = matrix.r_offset.saturating_sub(half);
    let hi = (matrix.r_offset + half).min(matrix.beat_len().saturating_sub(1));
    (lo, hi)
}

/// Per-beat `(qrs, t)` scale factors.
pub fn sc2_scales(matrix: &BeatMatrix, params: &ExtractParams) -> Vec<(f64, f64)> {
    let t = matrix.template();
    let (q_lo, q_hi) = qrs_segment(matrix);
    matrix
        .beats
        .iter()
        .zip(&matrix.spans)
        .map(|(row, &(lo, hi))| {
            let qrs = ls_scale(row, &t, q_lo.max(lo)..(q_hi + 1).min(hi), params.max_scale);
            let tw = ls_scale(row, &t, (q_hi + 1).max(lo)..hi, params.max_scale);
            (qrs, tw)
        })
        .collect()
}

pub fn extract_abs(signal: &[f64], qrs: &QrsAnnotations, params: &ExtractParams) -> Result<FwaveSignal, ExtractError> {
    let m = build_beat_matrix(signal, qrs, params)?;
    Ok(abs_from_matrix(signal, &m, qrs, Method::Abs))
}

fn abs_from_matrix(signal: &[f64], m: &BeatMatrix, qrs: &QrsAnnotations, method: Method) -> FwaveSignal {
    let t = m.template();
    let fitted = vec![t; m.n_beats()];
    finish(method, Method::Abs, subtract_fitted(signal, m, &fitted), qrs)
}

pub fn extract_abs_sc1(signal: &[f64], qrs: &QrsAnnotations, params: &ExtractParams) -> Result<FwaveSignal, ExtractError> {
    let m = build_beat_matrix(signal, qrs, params)?;
    let t = m.template();
    let fitted: Vec<Vec<f64>> = sc1_scales(&m, params)
        .into_iter()
        .map(|a| t.iter().map(|v| a * v).collect())
        .collect();
    Ok(finish(Method::AbsSc1, Method::AbsSc1, subtract_fitted(signal, &m, &fitted), qrs))
}

pub fn extract_abs_sc2(signal: &[f64], qrs: &QrsAnnotations, params: &ExtractParams) -> Result<FwaveSignal, ExtractError> {
    let m = build_beat_matrix(signal, qrs, params)?;
    let t = m.template();
    let (_, q_hi) = qrs_segment(&m);
    let boundary = (q_hi + 1) as f64;
    let fade = params.crossfade * m.fs as f64;
    // Weight of the T factor at column j.
    let weight = |j: usize| -> f64 {
        if fade <= 0.0 {
            return if (j as f64) < boundary { 0.0 } else { 1.0 };
        }
        ((j as f64 - boundary + fade / 2.0 + 0.5) / fade).clamp(0.0, 1.0)
    };
    let fitted: Vec<Vec<f64>> = sc2_scales(&m, params)
        .into_iter()
        .map(|(aq, at)| {
            t.iter()
                .enumerate()
                .map(|(j, v)| {
                    let w = weight(j);
                    ((1.0 - w) * aq + w * at) * v
                })
                .collect()
        })
        .collect();
    Ok(finish(Method::AbsSc2, Method::AbsSc2, subtract_fitted(signal, &m, &fitted), qrs))
}

/// Principal subspace of a beat ensemble.
#[derive(Clone, Debug)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// Leading eigenvectors, each of length L, sign-normalised.
    pub components: Vec<Vec<f64>>,
    /// All eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

/// PCA of the centred ensemble. Absent samples are filled with the mean so
/// they carry no variance. Returns `None` when the ensemble has no finite,
/// positive variance.
pub fn pca_basis(matrix: &BeatMatrix, params: &ExtractParams) -> Option<PcaBasis> {
    let b = matrix.n_beats();
    let l = matrix.beat_len();
    let mean = matrix.template();
    let centred = DMatrix::from_fn(b, l, |i, j| {
        let (lo, hi) = matrix.spans[i];
        if j >= lo && j < hi {
            matrix.beats[i][j] - mean[j]
        } else {
            0.0
        }
    });
    let cov = centred.transpose() * &centred / (b.saturating_sub(1).max(1)) as f64;
    let eig = SymmetricEigen::try_new(cov, f64::EPSILON, 0)?;
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return None;
    }
    let cap = params.pca_max_components.min(b - 1).max(1);
    let mut k = 0;
    let mut acc = 0.0;
    while k < cap {
        acc += eigenvalues[k];
        k += 1;
        if acc / total >= params.pca_variance {
            break;
        }
    }
    let components = order[..k]
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let pivot = v
                .iter()
                .enumerate()
                .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Some(PcaBasis {
        mean,
        components,
        eigenvalues,
    })
}

pub fn extract_ts_pca(signal: &[f64], qrs: &QrsAnnotations, params: &ExtractParams) -> Result<FwaveSignal, ExtractError> {
    let m = build_beat_matrix(signal, qrs, params)?;
    if m.n_beats() < 4 {
        return Ok(abs_from_matrix(signal, &m, qrs, Method::TsPca));
    }
    let Some(basis) = pca_basis(&m, params) else {
        return Ok(abs_from_matrix(signal, &m, qrs, Method::TsPca));
    };
    let k = basis.components.len();
    let fitted: Vec<Vec<f64>> = m
        .beats
        .iter()
        .zip(&m.spans)
        .map(|(row, &(lo, hi))| {
            let gram = DMatrix::from_fn(k, k, |p, q| {
                (lo..hi).map(|j| basis.components[p][j] * basis.components[q][j]).sum::<f64>()
            });
            let rhs = DVector::from_fn(k, |p, _| {
                (lo..hi)
                    .map(|j| basis.components[p][j] * (row[j] - basis.mean[j]))
                    .sum::<f64>()
            });
            let coef = gram
                .clone()
                .cholesky()
                .map(|c| c.solve(&rhs))
                .or_else(|| gram.svd(true, true).solve(&rhs, 1e-12).ok())
                .unwrap_or_else(|| DVector::zeros(k));
            (0..row.len())
                .map(|j| {
                    basis.mean[j]
                        + (0..k).map(|p| coef[p] * basis.components[p][j]).sum::<f64>()
                })
                .collect()
        })
        .collect();
    Ok(finish(Method::TsPca, Method::TsPca, subtract_fitted(signal, &m, &fitted), qrs))
}

/// Dispatches to the extractor for `method`.
pub fn extract(
    method: Method,
    signal: &[f64],
    qrs: &QrsAnnotations,
    params: &ExtractParams,
) -> Result<FwaveSignal, ExtractError> {
    match method {
        Method::Abs => extract_abs(signal, qrs, params),
        Method::AbsSc1 => extract_abs_sc1(signal, qrs, params),
        Method::AbsSc2 => extract_abs_sc2(signal, qrs, params),
        Method::TsPca => extract_ts_pca(signal, qrs, params),
    }
}
