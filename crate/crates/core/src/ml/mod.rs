//! Random-forest AF classification, model selection, AUROC and ranking.

pub mod forest;
pub mod metrics;
pub mod rank;
pub mod search;
pub mod stats;

use thiserror::Error;

use crate::features::FeatureVector;

pub use forest::{train_forest, HyperGrid, RfHyperparams, TrainedForest};
pub use metrics::{bootstrap_auroc, bootstrap_scores, compute_auroc, quantile, BootstrapCi};
pub use rank::{rank_methods, MethodResult, RankingReport};
pub use search::{grid_search_cv, record_folds, split_train_test, GridSearchResult};
pub use stats::{mann_whitney_u, stratify_age, AgeGroup, MannWhitney};

#[derive(Debug, Error)]
pub enum MlError {
    #[error("both classes are required, found only one")]
    SingleClass,
    #[error("{rows} feature rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("expected {expected} feature columns, found {found}")]
    ColumnMismatch { expected: usize, found: usize },
    #[error("hyperparameters outside the search grid: {0}")]
    OffGrid(String),
    #[error("need at least {needed} records per class, have {af} with AF and {non_af} without")]
    TooFewRecords { needed: usize, af: usize, non_af: usize },
    #[error("empty sample")]
    EmptySample,
    #[error("invalid model: {0}")]
    Model(String),
}

/// One classification row: a window's features and its AF label.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub record_id: String,
    pub window_idx: usize,
    pub features: Vec<f64>,
    pub is_af: bool,
}

impl Sample {
    /// `None` when a feature is missing.
    pub fn from_features(row: &FeatureVector) -> Option<Self> {
        Some(Self {
            record_id: row.record_id.clone(),
            window_idx: row.window_idx,
            features: row.values()?.to_vec(),
            is_af: row.label.is_af(),
        })
    }
}

/// Splits samples into a feature matrix and label vector.
pub fn design_matrix(samples: &[Sample]) -> (Vec<Vec<f64>>, Vec<bool>) {
    samples.iter().map(|s| (s.features.clone(), s.is_af)).unzip()
}
