//! Record-level train/test splitting and cross-validated grid search.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::forest::{staged_scores, HyperGrid, RfHyperparams};
use super::metrics::compute_auroc;
use super::{design_matrix, MlError, Sample};
use crate::rng::{derive_seed, rng_for};

/// Record ids split into the two strata: records with at least one AF
/// window and records without.
fn strata(samples: &[Sample]) -> (Vec<String>, Vec<String>) {
    let mut has_af: BTreeMap<&str, bool> = BTreeMap::new();
    for s in samples {
        *has_af.entry(&s.record_id).or_insert(false) |= s.is_af;
    }
    let mut af = Vec::new();
    let mut other = Vec::new();
    for (id, a) in has_af {
        if a {
            af.push(id.to_string());
        } else {
            other.push(id.to_string());
        }
    }
    (af, other)
}

fn class_record_counts(samples: &[Sample]) -> (usize, usize) {
    let af: BTreeSet<&str> = samples.iter().filter(|s| s.is_af).map(|s| s.record_id.as_str()).collect();
    let non: BTreeSet<&str> = samples.iter().filter(|s| !s.is_af).map(|s| s.record_id.as_str()).collect();
    (af.len(), non.len())
}

fn require_records(samples: &[Sample], needed: usize) -> Result<(), MlError> {
    let (af, non_af) = class_record_counts(samples);
    if af < needed || non_af < needed {
        return Err(MlError::TooFewRecords { needed, af, non_af });
    }
    Ok(())
}

/// Splits at record level so that about `ratio` of each stratum's records
/// are used for training.
pub fn split_train_test(samples: &[Sample], ratio: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>), MlError> {
    require_records(samples, 2)?;
    let (af, other) = strata(samples);
    let mut test_ids = BTreeSet::new();
    for (k, mut ids) in [af, other].into_iter().enumerate() {
        let n = ids.len();
        if n == 0 {
            continue;
        }
        ids.shuffle(&mut rng_for(seed, &[k as u64]));
        let mut n_test = ((1.0 - ratio) * n as f64).round() as usize;
        if n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        }
        test_ids.extend(ids.into_iter().take(n_test));
    }
    let (test, train) = samples.iter().cloned().partition(|s| test_ids.contains(&s.record_id));
    Ok((train, test))
}

/// Assigns each record to one of `k` folds, dealing each shuffled stratum
/// round-robin. Returns the fold index of every sample.
pub fn record_folds(samples: &[Sample], k: usize, seed: u64) -> Result<Vec<usize>, MlError> {
    require_records(samples, k)?;
    let (af, other) = strata(samples);
    let mut fold_of = BTreeMap::new();
    let mut next = 0;
    for (s, mut ids) in [af, other].into_iter().enumerate() {
        ids.shuffle(&mut rng_for(seed, &[s as u64]));
        for id in ids {
            fold_of.insert(id, next % k);
            next += 1;
        }
    }
    Ok(samples.iter().map(|s| fold_of[&s.record_id]).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hyperparams: RfHyperparams,
    pub mean_auroc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: RfHyperparams,
    pub best_auroc: f64,
    pub points: Vec<GridPoint>,
    pub folds: usize,
    pub seed: u64,
}

/// Seed of the forest trained on fold `fold`'s complement.
pub fn fold_forest_seed(seed: u64, fold: usize) -> u64 {
    derive_seed(seed, &[1, fold as u64])
}

/// Exhaustive `k`-fold search. The winner has the highest mean validation
/// AUROC; ties go to fewer estimators, then shallower depth, then fewer
/// features and smaller samples. Folds whose validation part holds a
/// single class are left out of the mean.
pub fn grid_search_cv(samples: &[Sample], grid: &HyperGrid, k: usize, seed: u64) -> Result<GridSearchResult, MlError> {
    if grid.is_empty() {
        return Err(MlError::OffGrid("empty grid".into()));
    }
    let fold_of = record_folds(samples, k, derive_seed(seed, &[0]))?;
    let mut counts = grid.n_estimators.clone();
    counts.sort_unstable();
    counts.dedup();
    let mut depths = grid.max_depth.clone();
    depths.sort_unstable();
    depths.dedup();
    let mut features = grid.max_features.clone();
    features.sort_unstable();
    features.dedup();
    let mut fractions = grid.max_samples.clone();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();

    // sums[(f, m)][d][e] accumulates validation AUROCs over usable folds.
    let mut sums = vec![vec![vec![0.0; counts.len()]; depths.len()]; features.len() * fractions.len()];
    let mut usable = 0usize;
    for fold in 0..k {
        let (train, valid): (Vec<_>, Vec<_>) = samples
            .iter()
            .zip(&fold_of)
            .partition(|(_, &f)| f != fold);
        let train: Vec<Sample> = train.into_iter().map(|(s, _)| s.clone()).collect();
        let valid: Vec<Sample> = valid.into_iter().map(|(s, _)| s.clone()).collect();
        let (xt, yt) = design_matrix(&train);
        let (xv, yv) = design_matrix(&valid);
        if !(yv.iter().any(|&v| v) && yv.iter().any(|&v| !v)) {
            continue;
        }
        if !(yt.iter().any(|&v| v) && yt.iter().any(|&v| !v)) {
            return Err(MlError::SingleClass);
        }
        usable += 1;
        let fseed = fold_forest_seed(seed, fold);
        for (fi, &mf) in features.iter().enumerate() {
            for (si, &ms) in fractions.iter().enumerate() {
                let scores = staged_scores(&xt, &yt, &xv, &counts, &depths, mf, ms, fseed);
                let acc = &mut sums[fi * fractions.len() + si];
                for d in 0..depths.len() {
                    for e in 0..counts.len() {
                        acc[d][e] += compute_auroc(&scores[d][e], &yv)?;
                    }
                }
            }
        }
    }
    if usable == 0 {
        return Err(MlError::SingleClass);
    }

    let mut points = Vec::with_capacity(grid.len());
    for (e, &n_estimators) in counts.iter().enumerate() {
        for (d, &max_depth) in depths.iter().enumerate() {
            for (fi, &max_features) in features.iter().enumerate() {
                for (si, &max_samples) in fractions.iter().enumerate() {
                    points.push(GridPoint {
                        hyperparams: RfHyperparams {
                            n_estimators,
                            max_depth,
                            max_features,
                            max_samples,
                        },
                        mean_auroc: sums[fi * fractions.len() + si][d][e] / usable as f64,
                    });
                }
            }
        }
    }
    let mut best = &points[0];
    for p in &points[1..] {
        if p.mean_auroc > best.mean_auroc + 1e-12 {
            best = p;
        }
    }
    Ok(GridSearchResult {
        best: best.hyperparams,
        best_auroc: best.mean_auroc,
        points: points.clone(),
        folds: usable,
        seed,
    })
}
