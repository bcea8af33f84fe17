//! End-to-end benchmark: load, filter, detect, window, extract, featurize,
//! classify and rank, plus the sex/age statistics and per-window dumps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BenchConfig, ConfigError, StageSeeds};
use crate::extract::{extract, qrs_mask, ExtractError, FwaveSignal, Method};
use crate::features::{featurize_window, write_feature_table, FeatureError, FeatureVector, WindowId, FEATURE_NAMES};
use crate::filter::{preprocess, FilterError};
use crate::ml::stats::AgeGroup;
use crate::ml::{
    bootstrap_auroc, design_matrix, grid_search_cv, mann_whitney_u, quantile, rank_methods, split_train_test,
    train_forest, GridSearchResult, MethodResult, MlError, RankingReport, Sample, TrainedForest,
};
use crate::qrs::{compute_bsqi, detect_qrs, detect_qrs_secondary, QrsError, BSQI_TOLERANCE};
use crate::record::{
    apply_exclusions, load_record, segment_windows, EcgRecord, ExclusionReason, RecordError, RecordMeta, Window,
    WindowStatus, META, SIGNAL_CSV, SIGNAL_F32,
};
use crate::sim::{generate_dataset, read_truth, rms_error, GroundTruth, SimError, TRUTH_FILE};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const FEATURES_FILE: &str = "features.csv";
pub const WINDOWS_FILE: &str = "windows.csv";
pub const CENSUS_FILE: &str = "census.csv";
pub const RMS_FILE: &str = "rms_error.csv";
pub const RMS_WINDOWS_FILE: &str = "rms_error_windows.csv";
pub const GRID_FILE: &str = "grid_search.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const RUN_MANIFEST: &str = "manifest.json";
pub const MODELS_DIR: &str = "models";

/// Processing stage at which a record failed.
#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Qrs(#[from] QrsError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },
    #[error("record {record_id}: {source}")]
    LoadRecord {
        record_id: String,
        #[source]
        source: RecordError,
    },
    #[error("record {record_id}, lead {lead}{}: {source}", window.map(|w| format!(", window {w}")).unwrap_or_default())]
    Processing {
        record_id: String,
        lead: String,
        window: Option<usize>,
        #[source]
        source: StageError,
    },
    #[error("classification of lead {lead}, method {method}: {source}")]
    Ml {
        lead: String,
        method: String,
        #[source]
        source: MlError,
    },
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Dataset { .. } | PipelineError::LoadRecord { .. } => 3,
            PipelineError::Processing { .. } => 4,
            PipelineError::Ml { .. } => 5,
            PipelineError::Sim(_) => 6,
            PipelineError::Output { .. } => 7,
        }
    }
}

fn output_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Output {
        path: path.to_path_buf(),
        source,
    }
}

/// A record with its ground truth when the data are simulated.
#[derive(Clone, Debug)]
pub struct DatasetRecord {
    pub record: EcgRecord,
    pub truth: Option<GroundTruth>,
}

fn is_record_dir(p: &Path) -> bool {
    p.is_dir() && (p.join(SIGNAL_CSV).is_file() || p.join(SIGNAL_F32).is_file())
}

/// Record directories under `dir`, sorted by name.
pub fn record_dirs(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let dataset_err = |reason: String| PipelineError::Dataset {
        path: dir.to_path_buf(),
        reason,
    };
    if !dir.is_dir() {
        return Err(dataset_err("not a directory".into()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| dataset_err(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_record_dir(p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(dataset_err("no record directories found".into()));
    }
    Ok(dirs)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetRecord>, PipelineError> {
    record_dirs(dir)?
        .par_iter()
        .map(|p| {
            let id = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let record = load_record(p).map_err(|source| PipelineError::LoadRecord {
                record_id: id.clone(),
                source,
            })?;
            let truth = if p.join(TRUTH_FILE).is_file() {
                let t = read_truth(p, record.sampling_rate).map_err(|e| PipelineError::Processing {
                    record_id: id.clone(),
                    lead: String::new(),
                    window: None,
                    source: e.into(),
                })?;
                if t.true_fwave.len() != record.len() {
                    return Err(PipelineError::Dataset {
                        path: p.join(TRUTH_FILE),
                        reason: format!("{} rows for {} samples", t.true_fwave.len(), record.len()),
                    });
                }
                Some(t)
            } else {
                None
            };
            Ok(DatasetRecord { record, truth })
        })
        .collect()
}

/// Loads or simulates the configured dataset.
pub fn materialize(cfg: &BenchConfig) -> Result<Vec<DatasetRecord>, PipelineError> {
    match (&cfg.dataset.path, &cfg.dataset.simulate) {
        (Some(p), _) => load_dataset(p),
        (None, Some(spec)) => Ok(generate_dataset(spec)?
            .into_iter()
            .map(|(e, r)| DatasetRecord {
                record: r.to_record(&e.record_id),
                truth: Some(r.truth),
            })
            .collect()),
        (None, None) => Err(ConfigError::Invalid("no dataset".into()).into()),
    }
}

/// Outcome of QRS detection and exclusion for one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub record_id: String,
    pub lead: String,
    pub window_idx: usize,
    pub start_sample: usize,
    pub label: String,
    pub status: String,
    pub reason: String,
    pub n_qrs: usize,
    pub bsqi: f64,
}

impl WindowRow {
    fn new(w: &Window, n_qrs: usize, bsqi: f64) -> Self {
        let (status, reason) = match w.status {
            WindowStatus::Included => ("INCLUDED", ""),
            WindowStatus::Excluded(r) => ("EXCLUDED", r.as_str()),
        };
        Self {
            record_id: w.record_id.clone(),
            lead: w.lead_name.clone(),
            window_idx: w.index,
            start_sample: w.start_sample,
            label: w.label.map(|l| l.as_str().to_string()).unwrap_or_default(),
            status: status.into(),
            reason: reason.into(),
            n_qrs,
            bsqi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsRow {
    pub record_id: String,
    pub lead: String,
    pub window_idx: usize,
    pub method: Method,
    pub inside_qrs_uv: Option<f64>,
    pub outside_qrs_uv: Option<f64>,
}

/// Everything computed for one record.
#[derive(Clone, Debug, Default)]
pub struct RecordOutput {
    pub windows: Vec<WindowRow>,
    pub features: Vec<FeatureVector>,
    pub rms: Vec<RmsRow>,
}

/// Detected beats and exclusion status of every window of one lead.
pub struct LeadAnalysis {
    pub filtered: Vec<f64>,
    pub windows: Vec<(Window, crate::qrs::QrsAnnotations, f64)>,
}

/// Filters the lead, detects beats with both detectors over the whole lead
/// and applies the window exclusions.
pub fn analyze_lead(record: &EcgRecord, lead: &str, cfg: &BenchConfig) -> Result<LeadAnalysis, StageError> {
    let samples = &record.lead(lead)?.samples;
    let windows = segment_windows(record, lead)?;
    if windows.is_empty() {
        return Ok(LeadAnalysis {
            filtered: Vec::new(),
            windows: Vec::new(),
        });
    }
    let fs = record.sampling_rate;
    let filtered = preprocess(samples, fs as f64, &cfg.filter)?;
    let primary = detect_qrs(&filtered, fs)?;
    let secondary = detect_qrs_secondary(&filtered, fs)?;
    let windows = windows
        .into_iter()
        .map(|w| {
            let a = primary.slice(w.range());
            let b = secondary.slice(w.range());
            let bsqi = compute_bsqi(&a, &b, BSQI_TOLERANCE);
            (apply_exclusions(&w, &a, bsqi), a, bsqi)
        })
        .collect();
    Ok(LeadAnalysis { filtered, windows })
}

pub fn process_record(item: &DatasetRecord, leads: &[String], cfg: &BenchConfig) -> Result<RecordOutput, PipelineError> {
    let record = &item.record;
    let mut out = RecordOutput::default();
    for lead in leads {
        let locus = |window: Option<usize>| {
            let (rid, l) = (record.record_id.clone(), lead.clone());
            move |e: StageError| PipelineError::Processing {
                record_id: rid,
                lead: l,
                window,
                source: e,
            }
        };
        let analysis = analyze_lead(record, lead, cfg).map_err(locus(None))?;
        for (w, qrs, bsqi) in &analysis.windows {
            out.windows.push(WindowRow::new(w, qrs.len(), *bsqi));
            if !w.status.is_included() {
                continue;
            }
            let label = w.label.expect("included windows are labelled");
            let range = w.range();
            let signal = &analysis.filtered[range.clone()];
            let id = WindowId {
                record_id: record.record_id.clone(),
                lead: lead.clone(),
                window_idx: w.index,
            };
            let truth = item.truth.as_ref().map(|t| t.slice(range.clone()));
            for &method in &cfg.methods {
                let d = extract(method, signal, qrs, &cfg.extract)
                    .map_err(|e| locus(Some(w.index))(e.into()))?;
                let fv = featurize_window(&d, &id, label, cfg.welch_segment)
                    .map_err(|e| locus(Some(w.index))(e.into()))?;
                out.features.push(fv);
                if let Some(t) = &truth {
                    match rms_error(&d, t) {
                        Ok(e) => out.rms.push(RmsRow {
                            record_id: id.record_id.clone(),
                            lead: lead.clone(),
                            window_idx: w.index,
                            method,
                            inside_qrs_uv: e.inside_qrs,
                            outside_qrs_uv: e.outside_qrs,
                        }),
                        Err(SimError::NoAfSamples) => {}
                        Err(e) => return Err(locus(Some(w.index))(e.into())),
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub lead: String,
    pub total: usize,
    pub included: usize,
    pub included_af: usize,
    pub included_non_af: usize,
    pub mixed_rhythm: usize,
    pub afl: usize,
    pub too_few_qrs: usize,
    pub low_bsqi: usize,
}

pub fn census(windows: &[WindowRow], leads: &[String]) -> Vec<CensusRow> {
    leads
        .iter()
        .map(|lead| {
            let rows: Vec<&WindowRow> = windows.iter().filter(|w| &w.lead == lead).collect();
            let reason = |r: ExclusionReason| rows.iter().filter(|w| w.reason == r.as_str()).count();
            let included: Vec<&&WindowRow> = rows.iter().filter(|w| w.status == "INCLUDED").collect();
            CensusRow {
                lead: lead.clone(),
                total: rows.len(),
                included: included.len(),
                included_af: included.iter().filter(|w| w.label == "AF").count(),
                included_non_af: included.iter().filter(|w| w.label == "NON_AF").count(),
                mixed_rhythm: reason(ExclusionReason::MixedRhythm),
                afl: reason(ExclusionReason::Afl),
                too_few_qrs: reason(ExclusionReason::TooFewQrs),
                low_bsqi: reason(ExclusionReason::LowBsqi),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsSummary {
    pub lead: String,
    pub method: Method,
    pub mean_inside_qrs_uv: Option<f64>,
    pub mean_outside_qrs_uv: Option<f64>,
    pub n_windows: usize,
}

/// Mean of the per-window RMS errors for every lead and method.
pub fn summarize_rms(rows: &[RmsRow], leads: &[String], methods: &[Method]) -> Vec<RmsSummary> {
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mut out = Vec::new();
    for lead in leads {
        for &method in methods {
            let sel: Vec<&RmsRow> = rows.iter().filter(|r| &r.lead == lead && r.method == method).collect();
            if sel.is_empty() {
                continue;
            }
            out.push(RmsSummary {
                lead: lead.clone(),
                method,
                mean_inside_qrs_uv: mean(sel.iter().filter_map(|r| r.inside_qrs_uv).collect()),
                mean_outside_qrs_uv: mean(sel.iter().filter_map(|r| r.outside_qrs_uv).collect()),
                n_windows: sel.len(),
            });
        }
    }
    out
}

/// Classification outcome for one lead and method.
#[derive(Clone, Debug)]
pub struct Classification {
    pub result: MethodResult,
    pub search: GridSearchResult,
    pub model: TrainedForest,
}

/// Split, grid search, final fit and bootstrap for one method's rows.
pub fn classify(
    rows: &[&FeatureVector],
    lead: &str,
    method: Method,
    cfg: &BenchConfig,
    seeds: &StageSeeds,
) -> Result<Classification, MlError> {
    let samples: Vec<Sample> = rows.iter().filter_map(|r| Sample::from_features(r)).collect();
    let (train, test) = split_train_test(&samples, cfg.ml.train_ratio, seeds.split)?;
    let search = grid_search_cv(&train, &cfg.ml.grid, cfg.ml.folds, seeds.cv)?;
    let (xt, yt) = design_matrix(&train);
    let model = train_forest(&xt, &yt, &FEATURE_NAMES, search.best, seeds.forest)?;
    let (xs, ys) = design_matrix(&test);
    let auroc = bootstrap_auroc(&model, &xs, &ys, cfg.ml.bootstrap_rounds, seeds.bootstrap)?;
    Ok(Classification {
        result: MethodResult {
            method,
            lead: lead.to_string(),
            hyperparams: search.best,
            effective_max_features: model.effective_max_features,
            cv_auroc: search.best_auroc,
            auroc,
            n_train: train.len(),
            n_test: test.len(),
        },
        search,
        model,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub version: String,
    pub seeds: StageSeeds,
    pub config: BenchConfig,
    pub n_records: usize,
    pub notes: Vec<String>,
    pub census: Vec<CensusRow>,
    pub ranking: RankingReport,
    pub rms_error: Vec<RmsSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seeds: StageSeeds,
    pub config: String,
    pub records: Vec<String>,
    pub files: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub windows: Vec<WindowRow>,
    pub census: Vec<CensusRow>,
    pub features: Vec<FeatureVector>,
    pub rms: Vec<RmsRow>,
    pub classifications: Vec<Classification>,
    pub report: BenchReport,
    pub manifest: RunManifest,
}

fn resolve_leads(cfg: &BenchConfig, data: &[DatasetRecord]) -> Result<Vec<String>, PipelineError> {
    if !cfg.leads.is_empty() {
        for item in data {
            for lead in &cfg.leads {
                item.record.lead(lead).map_err(|source| PipelineError::LoadRecord {
                    record_id: item.record.record_id.clone(),
                    source,
                })?;
            }
        }
        return Ok(cfg.leads.clone());
    }
    let mut leads: Vec<String> = Vec::new();
    for item in data {
        for l in item.record.lead_names() {
            if !leads.iter().any(|x| x == l) {
                leads.push(l.to_string());
            }
        }
    }
    Ok(leads)
}

/// Runs the whole benchmark in memory.
pub fn run(cfg: &BenchConfig) -> Result<RunOutputs, PipelineError> {
    cfg.validate()?;
    let data = materialize(cfg)?;
    run_on(cfg, &data)
}

pub fn run_on(cfg: &BenchConfig, data: &[DatasetRecord]) -> Result<RunOutputs, PipelineError> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let leads = resolve_leads(cfg, data)?;
    log::info!("processing {} records, leads {:?}", data.len(), leads);
    let per_record: Vec<RecordOutput> = data
        .par_iter()
        .map(|item| process_record(item, &leads, cfg))
        .collect::<Result<_, _>>()?;
    let mut windows = Vec::new();
    let mut features = Vec::new();
    let mut rms = Vec::new();
    for r in per_record {
        windows.extend(r.windows);
        features.extend(r.features);
        rms.extend(r.rms);
    }
    let census = census(&windows, &leads);

    let mut classifications = Vec::new();
    for lead in &leads {
        for &method in &cfg.methods {
            log::info!("classifying lead {lead} with {method}");
            let rows: Vec<&FeatureVector> = features.iter().filter(|f| &f.lead == lead && f.method == method).collect();
            let c = classify(&rows, lead, method, cfg, &seeds).map_err(|source| PipelineError::Ml {
                lead: lead.clone(),
                method: method.to_string(),
                source,
            })?;
            classifications.push(c);
        }
    }
    let results: Vec<MethodResult> = classifications.iter().map(|c| c.result.clone()).collect();
    let ranking = rank_methods(&results);

    let mut notes = Vec::new();
    if cfg.ml.grid.max_features.iter().any(|&m| m > FEATURE_NAMES.len()) {
        notes.push(format!(
            "max_features values above {} are clamped to the {} available features",
            FEATURE_NAMES.len(),
            FEATURE_NAMES.len()
        ));
    }
    let rms_summary = summarize_rms(&rms, &leads, &cfg.methods);
    let mut files: Vec<String> = [FEATURES_FILE, WINDOWS_FILE, CENSUS_FILE, GRID_FILE, REPORT_JSON, REPORT_CSV]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if !rms.is_empty() {
        files.push(RMS_FILE.into());
        files.push(RMS_WINDOWS_FILE.into());
    }
    if cfg.save_models {
        for c in &classifications {
            files.push(model_file(&c.result.lead, c.result.method));
        }
    }
    files.sort();
    let report = BenchReport {
        version: VERSION.into(),
        seeds,
        config: cfg.clone(),
        n_records: data.len(),
        notes,
        census: census.clone(),
        ranking,
        rms_error: rms_summary,
    };
    let manifest = RunManifest {
        version: VERSION.into(),
        seeds,
        config: cfg.to_toml(),
        records: data.iter().map(|d| d.record.record_id.clone()).collect(),
        files,
    };
    Ok(RunOutputs {
        windows,
        census,
        features,
        rms,
        classifications,
        report,
        manifest,
    })
}

fn model_file(lead: &str, method: Method) -> String {
    format!("{MODELS_DIR}/{lead}_{method}.json")
}

fn csv_string<T: Serialize>(rows: &[T], header: &[&str]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header).expect("in-memory csv");
    }
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn grid_csv(classifications: &[Classification]) -> String {
    let mut out = String::from("lead,method,n_estimators,max_depth,max_features,max_samples,mean_cv_auroc,selected\n");
    for c in classifications {
        for p in &c.search.points {
            let hp = p.hyperparams;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.result.lead,
                c.result.method,
                hp.n_estimators,
                hp.max_depth,
                hp.max_features,
                hp.max_samples,
                p.mean_auroc,
                hp == c.search.best
            ));
        }
    }
    out
}

fn rms_csv(summary: &[RmsSummary]) -> String {
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
    let mut out = String::from("lead,method,mean_inside_qrs_uv,mean_outside_qrs_uv,n_windows\n");
    for s in summary {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.lead,
            s.method,
            opt(s.mean_inside_qrs_uv),
            opt(s.mean_outside_qrs_uv),
            s.n_windows
        ));
    }
    out
}

fn rms_windows_csv(rows: &[RmsRow]) -> String {
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
    let mut out = String::from("record_id,lead,window_idx,method,inside_qrs_uv,outside_qrs_uv\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.record_id,
            r.lead,
            r.window_idx,
            r.method,
            opt(r.inside_qrs_uv),
            opt(r.outside_qrs_uv)
        ));
    }
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), PipelineError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(output_err(parent))?;
    }
    fs::write(&path, contents).map_err(output_err(&path))
}

/// Writes every artifact of a run into `dir`.
pub fn write_outputs(out: &RunOutputs, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(output_err(dir))?;
    let mut features = Vec::new();
    write_feature_table(&mut features, &out.features).map_err(|e| PipelineError::Output {
        path: dir.join(FEATURES_FILE),
        source: std::io::Error::other(e.to_string()),
    })?;
    write_file(dir, FEATURES_FILE, &String::from_utf8_lossy(&features))?;
    write_file(
        dir,
        WINDOWS_FILE,
        &csv_string(
            &out.windows,
            &["record_id", "lead", "window_idx", "start_sample", "label", "status", "reason", "n_qrs", "bsqi"],
        ),
    )?;
    write_file(
        dir,
        CENSUS_FILE,
        &csv_string(
            &out.census,
            &[
                "lead",
                "total",
                "included",
                "included_af",
                "included_non_af",
                "mixed_rhythm",
                "afl",
                "too_few_qrs",
                "low_bsqi",
            ],
        ),
    )?;
    write_file(dir, GRID_FILE, &grid_csv(&out.classifications))?;
    if !out.rms.is_empty() {
        write_file(dir, RMS_FILE, &rms_csv(&out.report.rms_error))?;
        write_file(dir, RMS_WINDOWS_FILE, &rms_windows_csv(&out.rms))?;
    }
    write_file(dir, REPORT_CSV, &out.report.ranking.to_csv())?;
    let json = serde_json::to_string_pretty(&out.report).expect("report serialization");
    write_file(dir, REPORT_JSON, &format!("{json}\n"))?;
    if out.report.config.save_models {
        for c in &out.classifications {
            write_file(dir, &model_file(&c.result.lead, c.result.method), &c.model.to_json())?;
        }
    }
    let manifest = serde_json::to_string_pretty(&out.manifest).expect("manifest serialization");
    write_file(dir, RUN_MANIFEST, &format!("{manifest}\n"))
}

/// Validates, runs and writes to the configured output directory. Nothing
/// is written unless the whole run succeeds.
pub fn run_and_write(cfg: &BenchConfig) -> Result<RunOutputs, PipelineError> {
    let out = run(cfg)?;
    write_outputs(&out, &cfg.output_dir)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sex and age statistics
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SexTestRow {
    pub lead: String,
    pub method: Method,
    pub feature: String,
    pub n_f: usize,
    pub n_m: usize,
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub lead: String,
    pub method: Method,
    pub feature: String,
    /// `sex` or `age`.
    pub grouping: String,
    pub group: String,
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub sex: Vec<SexTestRow>,
    pub boxes: Vec<BoxRow>,
    pub warnings: Vec<String>,
}

pub const SEX_FILE: &str = "stats_sex.csv";
pub const BOX_FILE: &str = "stats_box.csv";

/// Reads `meta.json` of every record directory under `dir`.
pub fn load_metadata(dir: &Path) -> Result<BTreeMap<String, RecordMeta>, PipelineError> {
    let mut out = BTreeMap::new();
    for p in record_dirs(dir)? {
        let id = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let path = p.join(META);
        let meta = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| PipelineError::Dataset {
                path: path.clone(),
                reason: e.to_string(),
            })?,
            Err(_) => RecordMeta::default(),
        };
        out.insert(id, meta);
    }
    Ok(out)
}

/// Mann–Whitney F vs M and box-plot quartiles per sex and age group, over
/// AF windows only.
pub fn compute_stats(features: &[FeatureVector], meta: &BTreeMap<String, RecordMeta>) -> StatsReport {
    let mut report = StatsReport::default();
    let af: Vec<&FeatureVector> = features.iter().filter(|f| f.label.is_af()).collect();
    let missing: std::collections::BTreeSet<&str> = af
        .iter()
        .filter(|f| !meta.contains_key(&f.record_id))
        .map(|f| f.record_id.as_str())
        .collect();
    if !missing.is_empty() {
        report.warnings.push(format!("{} records without metadata are skipped", missing.len()));
    }
    let mut keys: Vec<(String, Method)> = af.iter().map(|f| (f.lead.clone(), f.method)).collect();
    keys.sort();
    keys.dedup();
    let mut any_sex = false;
    let mut any_age = false;
    for (lead, method) in keys {
        let rows: Vec<&FeatureVector> = af.iter().copied().filter(|f| f.lead == lead && f.method == method).collect();
        for (fi, name) in FEATURE_NAMES.iter().enumerate() {
            let value = |f: &FeatureVector| f.values().map(|v| v[fi]);
            let by_sex = |sex: crate::record::Sex| -> Vec<f64> {
                rows.iter()
                    .filter(|f| meta.get(&f.record_id).and_then(|m| m.sex) == Some(sex))
                    .filter_map(|f| value(f))
                    .collect()
            };
            let (female, male) = (by_sex(crate::record::Sex::F), by_sex(crate::record::Sex::M));
            let mut push_box = |grouping: &str, group: &str, v: &[f64]| {
                if !v.is_empty() {
                    report.boxes.push(BoxRow {
                        lead: lead.clone(),
                        method,
                        feature: name.to_string(),
                        grouping: grouping.into(),
                        group: group.into(),
                        n: v.len(),
                        q1: quantile(v, 0.25),
                        median: quantile(v, 0.5),
                        q3: quantile(v, 0.75),
                    });
                }
            };
            push_box("sex", "F", &female);
            push_box("sex", "M", &male);
            for g in AgeGroup::ALL {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|f| meta.get(&f.record_id).and_then(|m| m.age).map(AgeGroup::of) == Some(g))
                    .filter_map(|f| value(f))
                    .collect();
                any_age |= !v.is_empty();
                push_box("age", g.as_str(), &v);
            }
            if let Ok(t) = mann_whitney_u(&female, &male) {
                any_sex = true;
                report.sex.push(SexTestRow {
                    lead: lead.clone(),
                    method,
                    feature: name.to_string(),
                    n_f: female.len(),
                    n_m: male.len(),
                    u: t.u,
                    p_value: t.p_value,
                    exact: t.exact,
                    significant: t.significant(),
                });
            }
        }
    }
    if !any_sex {
        report.warnings.push("no AF windows with both sexes present; sex analysis skipped".into());
    }
    if !any_age {
        report.warnings.push("no AF windows with a known age; age analysis skipped".into());
    }
    report
}

pub fn write_stats(report: &StatsReport, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(output_err(dir))?;
    write_file(
        dir,
        SEX_FILE,
        &csv_string(
            &report.sex,
            &["lead", "method", "feature", "n_f", "n_m", "u", "p_value", "exact", "significant"],
        ),
    )?;
    write_file(
        dir,
        BOX_FILE,
        &csv_string(
            &report.boxes,
            &["lead", "method", "feature", "grouping", "group", "n", "q1", "median", "q3"],
        ),
    )
}

// ---------------------------------------------------------------------------
// Per-window dump
// ---------------------------------------------------------------------------

/// Filtered ECG, QRS mask and each method's f-wave for one window, as CSV
/// with columns `sample,ecg,qrs,<method>...`.
pub fn dump_window(
    record: &EcgRecord,
    lead: &str,
    window_idx: usize,
    methods: &[Method],
    cfg: &BenchConfig,
) -> Result<String, PipelineError> {
    let locus = |e: StageError| PipelineError::Processing {
        record_id: record.record_id.clone(),
        lead: lead.to_string(),
        window: Some(window_idx),
        source: e,
    };
    let analysis = analyze_lead(record, lead, cfg).map_err(locus)?;
    let Some((w, qrs, _)) = analysis.windows.iter().find(|(w, _, _)| w.index == window_idx) else {
        return Err(PipelineError::Dataset {
            path: PathBuf::from(&record.record_id),
            reason: format!("window {window_idx} does not exist; lead {lead} has {} windows", analysis.windows.len()),
        });
    };
    let signal = &analysis.filtered[w.range()];
    let ds: Vec<FwaveSignal> = methods
        .iter()
        .map(|&m| extract(m, signal, qrs, &cfg.extract).map_err(|e| locus(e.into())))
        .collect::<Result<_, _>>()?;
    let mask = qrs_mask(signal.len(), &qrs.r_peaks, qrs.fs);
    let mut out = String::from("sample,ecg,qrs");
    for m in methods {
        out.push(',');
        out.push_str(m.as_str());
    }
    out.push('\n');
    for i in 0..signal.len() {
        out.push_str(&format!("{},{},{}", w.start_sample + i, signal[i], u8::from(mask[i])));
        for d in &ds {
            out.push_str(&format!(",{}", d.d[i]));
        }
        out.push('\n');
    }
    Ok(out)
}
