//! Benchmark configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! methods = ["ABS", "ABS_sc1", "ABS_sc2", "TS_PCA"]
//! leads = ["V1"]            # optional, default: every lead
//! output_dir = "out"
//!
//! [dataset]
//! path = "data/sim"         # a directory of record directories, or
//! # simulate = { n_records = 100, noise_rms = 100.0, master_seed = 1, duration = 300.0, fs = 200 }
//!
//! [filter]
//! low_cutoff = 0.67
//! high_cutoff = 100.0
//! # notch_freq = 50.0
//!
//! [ml]
//! train_ratio = 0.8
//! folds = 5
//! bootstrap_rounds = 100
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{ExtractParams, Method};
use crate::features::DEFAULT_SEGMENT_LEN;
use crate::filter::FilterSpec;
use crate::ml::HyperGrid;
use crate::rng::derive_seed;
use crate::sim::DatasetSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub path: Option<PathBuf>,
    pub simulate: Option<DatasetSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlConfig {
    pub train_ratio: f64,
    pub folds: usize,
    pub bootstrap_rounds: usize,
    pub grid: HyperGrid,
}

impl Default for MlConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            folds: 5,
            bootstrap_rounds: 100,
            grid: HyperGrid::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub dataset: DatasetSource,
    /// Empty means every lead of each record.
    pub leads: Vec<String>,
    pub methods: Vec<Method>,
    pub filter: FilterSpec,
    pub extract: ExtractParams,
    pub welch_segment: usize,
    pub ml: MlConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub save_models: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            leads: Vec::new(),
            methods: Method::ALL.to_vec(),
            filter: FilterSpec::default(),
            extract: ExtractParams::default(),
            welch_segment: DEFAULT_SEGMENT_LEN,
            ml: MlConfig::default(),
            seed: 1,
            output_dir: PathBuf::from("out"),
            save_models: false,
        }
    }
}

/// Seeds of the independent random stages, all derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub master: u64,
    pub split: u64,
    pub cv: u64,
    pub forest: u64,
    pub bootstrap: u64,
}

impl StageSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            master,
            split: derive_seed(master, &[10]),
            cv: derive_seed(master, &[11]),
            forest: derive_seed(master, &[12]),
            bootstrap: derive_seed(master, &[13]),
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: BenchConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative dataset path or output directory is
    /// resolved against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: BenchConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = &cfg.dataset.path {
            if p.is_relative() {
                cfg.dataset.path = Some(base.join(p));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization")
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds::from_master(self.seed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        match (&self.dataset.path, &self.dataset.simulate) {
            (Some(_), Some(_)) => return bad("dataset: set either path or simulate, not both".into()),
            (None, None) => return bad("dataset: one of path or simulate is required".into()),
            (_, Some(s)) if s.n_records == 0 => return bad("dataset.simulate.n_records must be at least 1".into()),
            (_, Some(s)) if s.noise_rms.is_nan() || s.noise_rms < 0.0 => return bad(format!("dataset.simulate.noise_rms = {}", s.noise_rms)),
            _ => {}
        }
        if self.methods.is_empty() {
            return bad("methods: at least one extraction method is required".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("methods: duplicate entries".into());
        }
        self.filter.validate().map_err(|e| ConfigError::Invalid(format!("filter: {e}")))?;
        if self.welch_segment < 2 {
            return bad(format!("welch_segment = {} is too short", self.welch_segment));
        }
        if !(self.ml.train_ratio > 0.0 && self.ml.train_ratio < 1.0) {
            return bad(format!("ml.train_ratio = {} must lie in (0, 1)", self.ml.train_ratio));
        }
        if self.ml.folds < 2 {
            return bad(format!("ml.folds = {} must be at least 2", self.ml.folds));
        }
        if self.ml.bootstrap_rounds == 0 {
            return bad("ml.bootstrap_rounds must be at least 1".into());
        }
        self.ml.grid.validate().map_err(|e| ConfigError::Invalid(format!("ml.grid: {e}")))?;
        let e = &self.extract;
        if !(e.beat_pre > 0.0 && e.beat_post > 0.0 && e.pca_variance > 0.0 && e.pca_variance <= 1.0) {
            return bad("extract: beat spans and pca_variance must be positive, pca_variance at most 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let cfg = BenchConfig::from_toml("[dataset]\npath = \"data\"\n").unwrap();
        assert_eq!(cfg.methods, Method::ALL.to_vec());
        assert_eq!(cfg.ml.grid.len(), 240);
    }

    #[test]
    fn round_trip() {
        let cfg = BenchConfig {
            dataset: DatasetSource {
                path: None,
                simulate: Some(DatasetSpec::default()),
            },
            methods: vec![Method::TsPca],
            ..BenchConfig::default()
        };
        assert_eq!(BenchConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "",
            "methods = []\n[dataset]\npath = \"d\"\n",
            "methods = [\"XYZ\"]\n[dataset]\npath = \"d\"\n",
            "[dataset]\npath = \"d\"\n[ml]\nfolds = 1\n",
            "[dataset]\npath = \"d\"\n[ml.grid]\nn_estimators = [50]\nmax_depth = [1]\nmax_features = [2]\nmax_samples = [0.1]\n",
            "[dataset]\npath = \"d\"\nsurprise = 1\n",
        ] {
            assert!(BenchConfig::from_toml(text).is_err(), "{text}");
        }
    }
}
