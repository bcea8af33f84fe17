//! ECG record model, on-disk record directories, 1-min windowing and window
//! exclusion.
//!
//! A record directory holds
//!
//! ```text
//! signal.csv           fs=<Hz> / lead names / one row per sample (mV)
//!   or signal.f32      little-endian f32, lead-interleaved
//!      + signal.meta.json
//! annotations.json     [{"start": .., "end": .., "label": "AF"|"AFL"|"OTHER"}]
//! meta.json            {"age": int|null, "sex": "F"|"M"|null}
//! ```
//!
//! Annotation intervals are half-open `[start, end)` in samples.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qrs::QrsAnnotations;

pub const SIGNAL_CSV: &str = "signal.csv";
pub const SIGNAL_F32: &str = "signal.f32";
pub const SIGNAL_F32_META: &str = "signal.meta.json";
pub const ANNOTATIONS: &str = "annotations.json";
pub const META: &str = "meta.json";

/// Window length in seconds.
pub const WINDOW_SECONDS: usize = 60;
/// Minimum number of detected QRS complexes for a usable window.
pub const MIN_QRS_PER_WINDOW: usize = 10;
/// Windows with bSQI strictly below this are excluded.
pub const MIN_BSQI: f64 = 0.8;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("malformed {file}: {reason}")]
    Malformed { file: PathBuf, reason: String },
    #[error("annotation [{start}, {end}) outside signal of {len} samples")]
    AnnotationRange { start: usize, end: usize, len: usize },
    #[error("annotations not sorted or overlapping at interval {index}")]
    AnnotationOrder { index: usize },
    #[error("lead {lead} has {found} samples, expected {expected}")]
    LeadLengthMismatch {
        lead: String,
        expected: usize,
        found: usize,
    },
    #[error("sampling rate must be positive")]
    InvalidSamplingRate,
    #[error("record has no leads")]
    NoLeads,
    #[error("unknown lead {0}")]
    UnknownLead(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn malformed(file: &Path, reason: impl Into<String>) -> RecordError {
    RecordError::Malformed {
        file: file.to_path_buf(),
        reason: reason.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RecordError + '_ {
    move |source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RhythmLabel {
    #[serde(rename = "AF")]
    Af,
    #[serde(rename = "AFL")]
    Afl,
    #[serde(rename = "OTHER")]
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RhythmInterval {
    pub start: usize,
    pub end: usize,
    pub label: RhythmLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub age: Option<u32>,
    pub sex: Option<Sex>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lead {
    pub name: String,
    pub samples: Vec<f64>,
}

/// A multi-lead sampled ECG with rhythm annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub sampling_rate: u32,
    pub leads: Vec<Lead>,
    pub rhythm_intervals: Vec<RhythmInterval>,
    pub age: Option<u32>,
    pub sex: Option<Sex>,
}

impl EcgRecord {
    /// Builds a record, checking lead lengths and annotation ordering.
    pub fn new(
        record_id: impl Into<String>,
        sampling_rate: u32,
        leads: Vec<Lead>,
        rhythm_intervals: Vec<RhythmInterval>,
        meta: RecordMeta,
    ) -> Result<Self, RecordError> {
        let record = Self {
            record_id: record_id.into(),
            sampling_rate,
            leads,
            rhythm_intervals,
            age: meta.age,
            sex: meta.sex,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.sampling_rate == 0 {
            return Err(RecordError::InvalidSamplingRate);
        }
        let first = self.leads.first().ok_or(RecordError::NoLeads)?;
        let len = first.samples.len();
        for lead in &self.leads {
            if lead.samples.len() != len {
                return Err(RecordError::LeadLengthMismatch {
                    lead: lead.name.clone(),
                    expected: len,
                    found: lead.samples.len(),
                });
            }
        }
        validate_intervals(&self.rhythm_intervals, len)
    }

    pub fn len(&self) -> usize {
        self.leads.first().map_or(0, |l| l.samples.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lead(&self, name: &str) -> Result<&Lead, RecordError> {
        self.leads
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| RecordError::UnknownLead(name.to_string()))
    }

    pub fn lead_names(&self) -> Vec<&str> {
        self.leads.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn meta(&self) -> RecordMeta {
        RecordMeta {
            age: self.age,
            sex: self.sex,
        }
    }

    /// Samples per analysis window.
    pub fn window_len(&self) -> usize {
        WINDOW_SECONDS * self.sampling_rate as usize
    }
}

fn validate_intervals(intervals: &[RhythmInterval], len: usize) -> Result<(), RecordError> {
    let mut prev_end = 0;
    for (index, iv) in intervals.iter().enumerate() {
        if iv.start >= iv.end || iv.end > len {
            return Err(RecordError::AnnotationRange {
                start: iv.start,
                end: iv.end,
                len,
            });
        }
        if iv.start < prev_end {
            return Err(RecordError::AnnotationOrder { index });
        }
        prev_end = iv.end;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalFormat {
    Csv,
    F32,
}

#[derive(Debug, Serialize, Deserialize)]
struct F32Descriptor {
    fs: u32,
    leads: Vec<String>,
    n_samples: usize,
}

/// Reads a record directory. The record id is the directory name.
pub fn load_record(path: &Path) -> Result<EcgRecord, RecordError> {
    if !path.is_dir() {
        return Err(RecordError::MissingFile(path.to_path_buf()));
    }
    let record_id = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let csv_path = path.join(SIGNAL_CSV);
    let f32_path = path.join(SIGNAL_F32);
    let (fs, leads) = if csv_path.is_file() {
        read_signal_csv(&csv_path)?
    } else if f32_path.is_file() {
        read_signal_f32(&f32_path, &path.join(SIGNAL_F32_META))?
    } else {
        return Err(RecordError::MissingFile(csv_path));
    };

    let ann_path = path.join(ANNOTATIONS);
    let intervals: Vec<RhythmInterval> = read_json(&ann_path)?;
    let meta_path = path.join(META);
    let meta: RecordMeta = if meta_path.is_file() {
        read_json(&meta_path)?
    } else {
        RecordMeta::default()
    };

    EcgRecord::new(record_id, fs, leads, intervals, meta)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, RecordError> {
    if !path.is_file() {
        return Err(RecordError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| malformed(path, e.to_string()))
}

fn parse_fs(line: &str, path: &Path) -> Result<u32, RecordError> {
    let value = line
        .trim()
        .strip_prefix("fs=")
        .ok_or_else(|| malformed(path, "first line must be fs=<Hz>"))?;
    let fs: u32 = value
        .parse()
        .map_err(|_| malformed(path, format!("bad sampling rate {value:?}")))?;
    if fs == 0 {
        return Err(RecordError::InvalidSamplingRate);
    }
    Ok(fs)
}

fn read_signal_csv(path: &Path) -> Result<(u32, Vec<Lead>), RecordError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let fs = parse_fs(lines.next().ok_or_else(|| malformed(path, "empty file"))?, path)?;
    let names: Vec<String> = lines
        .next()
        .ok_or_else(|| malformed(path, "missing lead-name header"))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    if names.iter().any(|n| n.is_empty()) {
        return Err(malformed(path, "empty lead name"));
    }
    let mut leads: Vec<Lead> = names
        .into_iter()
        .map(|name| Lead {
            name,
            samples: Vec::new(),
        })
        .collect();
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for (col, field) in line.split(',').enumerate() {
            let lead = leads
                .get_mut(col)
                .ok_or_else(|| malformed(path, format!("row {row}: too many columns")))?;
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| malformed(path, format!("row {row}: bad value {field:?}")))?;
            if !v.is_finite() {
                return Err(malformed(path, format!("row {row}: non-finite value")));
            }
            lead.samples.push(v);
            count += 1;
        }
        if count != leads.len() {
            return Err(malformed(path, format!("row {row}: expected {} columns", leads.len())));
        }
    }
    if leads[0].samples.is_empty() {
        return Err(malformed(path, "no samples"));
    }
    Ok((fs, leads))
}

fn read_signal_f32(path: &Path, meta_path: &Path) -> Result<(u32, Vec<Lead>), RecordError> {
    let desc: F32Descriptor = read_json(meta_path)?;
    if desc.fs == 0 {
        return Err(RecordError::InvalidSamplingRate);
    }
    if desc.leads.is_empty() {
        return Err(RecordError::NoLeads);
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.is_empty() {
        return Err(malformed(path, "no samples"));
    }
    let n_leads = desc.leads.len();
    if bytes.len() % (4 * n_leads) != 0 {
        return Err(malformed(path, "byte length not a multiple of 4 * leads"));
    }
    let n = bytes.len() / (4 * n_leads);
    if n != desc.n_samples {
        return Err(RecordError::LeadLengthMismatch {
            lead: desc.leads[0].clone(),
            expected: desc.n_samples,
            found: n,
        });
    }
    let mut leads: Vec<Lead> = desc
        .leads
        .into_iter()
        .map(|name| Lead {
            name,
            samples: Vec::with_capacity(n),
        })
        .collect();
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(malformed(path, format!("non-finite sample at {i}")));
        }
        leads[i % n_leads].samples.push(v as f64);
    }
    Ok((desc.fs, leads))
}

/// Writes `record` as a canonical record directory, creating `dir` if needed.
pub fn write_record(record: &EcgRecord, dir: &Path, format: SignalFormat) -> Result<(), RecordError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    match format {
        SignalFormat::Csv => {
            let path = dir.join(SIGNAL_CSV);
            let mut out = String::with_capacity(record.len() * 10 * record.leads.len());
            out.push_str(&format!("fs={}\n", record.sampling_rate));
            out.push_str(&record.lead_names().join(","));
            out.push('\n');
            for i in 0..record.len() {
                for (j, lead) in record.leads.iter().enumerate() {
                    if j > 0 {
                        out.push(',');
                    }
                    out.push_str(&lead.samples[i].to_string());
                }
                out.push('\n');
            }
            fs::write(&path, out).map_err(io_err(&path))?;
        }
        SignalFormat::F32 => {
            let path = dir.join(SIGNAL_F32);
            let mut bytes = Vec::with_capacity(record.len() * 4 * record.leads.len());
            for i in 0..record.len() {
                for lead in &record.leads {
                    bytes.extend_from_slice(&(lead.samples[i] as f32).to_le_bytes());
                }
            }
            fs::write(&path, bytes).map_err(io_err(&path))?;
            let desc = F32Descriptor {
                fs: record.sampling_rate,
                leads: record.leads.iter().map(|l| l.name.clone()).collect(),
                n_samples: record.len(),
            };
            write_json(&dir.join(SIGNAL_F32_META), &desc)?;
        }
    }
    write_json(&dir.join(ANNOTATIONS), &record.rhythm_intervals)?;
    write_json(&dir.join(META), &record.meta())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), RecordError> {
    let mut text = serde_json::to_string_pretty(value).expect("json serialization");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WindowLabel {
    #[serde(rename = "NON_AF")]
    NonAf,
    #[serde(rename = "AF")]
    Af,
}

impl WindowLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            WindowLabel::Af => "AF",
            WindowLabel::NonAf => "NON_AF",
        }
    }

    pub fn is_af(self) -> bool {
        self == WindowLabel::Af
    }
}

impl fmt::Display for WindowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reasons in the order they are checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExclusionReason {
    #[serde(rename = "MIXED_RHYTHM")]
    MixedRhythm,
    #[serde(rename = "AFL")]
    Afl,
    #[serde(rename = "TOO_FEW_QRS")]
    TooFewQrs,
    #[serde(rename = "LOW_BSQI")]
    LowBsqi,
}

impl ExclusionReason {
    pub const ALL: [ExclusionReason; 4] = [
        ExclusionReason::MixedRhythm,
        ExclusionReason::Afl,
        ExclusionReason::TooFewQrs,
        ExclusionReason::LowBsqi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::MixedRhythm => "MIXED_RHYTHM",
            ExclusionReason::Afl => "AFL",
            ExclusionReason::TooFewQrs => "TOO_FEW_QRS",
            ExclusionReason::LowBsqi => "LOW_BSQI",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowStatus {
    Included,
    Excluded(ExclusionReason),
}

impl WindowStatus {
    pub fn is_included(self) -> bool {
        self == WindowStatus::Included
    }
}

/// One single-lead 1-min analysis unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub record_id: String,
    pub lead_name: String,
    pub index: usize,
    pub start_sample: usize,
    pub len: usize,
    /// `None` when the window mixes AF and non-AF samples.
    pub label: Option<WindowLabel>,
    /// Any sample overlaps an AFL interval.
    pub touches_afl: bool,
    pub status: WindowStatus,
}

impl Window {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start_sample..self.start_sample + self.len
    }
}

fn overlap(a: std::ops::Range<usize>, start: usize, end: usize) -> usize {
    end.min(a.end).saturating_sub(start.max(a.start))
}

/// Tiles the lead into whole 1-min windows and labels each one. Unannotated
/// samples count as non-AF.
pub fn segment_windows(record: &EcgRecord, lead_name: &str) -> Result<Vec<Window>, RecordError> {
    record.lead(lead_name)?;
    let n = record.window_len();
    let count = record.len() / n;
    let intervals = &record.rhythm_intervals;
    let mut windows = Vec::with_capacity(count);
    let mut first = 0;
    for index in 0..count {
        let range = index * n..(index + 1) * n;
        while first < intervals.len() && intervals[first].end <= range.start {
            first += 1;
        }
        let mut af = 0;
        let mut touches_afl = false;
        for iv in intervals[first..].iter().take_while(|iv| iv.start < range.end) {
            let o = overlap(range.clone(), iv.start, iv.end);
            match iv.label {
                RhythmLabel::Af => af += o,
                RhythmLabel::Afl => touches_afl |= o > 0,
                RhythmLabel::Other => {}
            }
        }
        let label = if af == n {
            Some(WindowLabel::Af)
        } else if af == 0 {
            Some(WindowLabel::NonAf)
        } else {
            None
        };
        let status = match label {
            None => WindowStatus::Excluded(ExclusionReason::MixedRhythm),
            Some(_) => WindowStatus::Included,
        };
        windows.push(Window {
            record_id: record.record_id.clone(),
            lead_name: lead_name.to_string(),
            index,
            start_sample: range.start,
            len: n,
            label,
            touches_afl,
            status,
        });
    }
    Ok(windows)
}

/// Applies the exclusion rules; the first failing rule in
/// [`ExclusionReason::ALL`] order is recorded.
pub fn apply_exclusions(window: &Window, qrs: &QrsAnnotations, bsqi: f64) -> Window {
    let status = if window.label.is_none() {
        WindowStatus::Excluded(ExclusionReason::MixedRhythm)
    } else if window.touches_afl {
        WindowStatus::Excluded(ExclusionReason::Afl)
    } else if qrs.r_peaks.len() < MIN_QRS_PER_WINDOW {
        WindowStatus::Excluded(ExclusionReason::TooFewQrs)
    } else if bsqi < MIN_BSQI {
        WindowStatus::Excluded(ExclusionReason::LowBsqi)
    } else {
        WindowStatus::Included
    };
    Window {
        status,
        ..window.clone()
    }
}
