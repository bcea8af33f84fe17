//! AUROC and its bootstrap distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::forest::TrainedForest;
use super::MlError;
use crate::rng::rng_for;

/// Resample attempts before a bootstrap round gives up on finding both classes.
const MAX_REDRAWS: u64 = 1000;

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Probability that a random AF row outscores a random non-AF row, ties
/// counting one half.
pub fn compute_auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MlError> {
    if scores.len() != labels.len() {
        return Err(MlError::LengthMismatch {
            rows: scores.len(),
            labels: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MlError::SingleClass);
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Linear-interpolation quantile of unsorted data, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_rounds: usize,
    pub seed: u64,
}

/// Resamples rows with replacement `n_rounds` times and summarises the
/// AUROC distribution by its median and 2.5/97.5 percentiles. A resample
/// that lacks a class is redrawn.
pub fn bootstrap_scores(scores: &[f64], labels: &[bool], n_rounds: usize, seed: u64) -> Result<BootstrapCi, MlError> {
    compute_auroc(scores, labels)?;
    let n = scores.len();
    let aurocs: Vec<f64> = (0..n_rounds as u64)
        .map(|round| {
            let mut s = vec![0.0; n];
            let mut l = vec![false; n];
            for attempt in 0..MAX_REDRAWS {
                let mut rng = rng_for(seed, &[round, attempt]);
                for k in 0..n {
                    let i = rng.gen_range(0..n);
                    s[k] = scores[i];
                    l[k] = labels[i];
                }
                if let Ok(a) = compute_auroc(&s, &l) {
                    return Ok(a);
                }
            }
            Err(MlError::SingleClass)
        })
        .collect::<Result<_, _>>()?;
    let mut sorted = aurocs;
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        median: quantile_sorted(&sorted, 0.5),
        ci_low: quantile_sorted(&sorted, 0.025),
        ci_high: quantile_sorted(&sorted, 0.975),
        n_rounds,
        seed,
    })
}

pub fn bootstrap_auroc(
    model: &TrainedForest,
    x: &[Vec<f64>],
    labels: &[bool],
    n_rounds: usize,
    seed: u64,
) -> Result<BootstrapCi, MlError> {
    let scores = model.predict_proba(x)?;
    bootstrap_scores(&scores, labels, n_rounds, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let a = compute_auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(a, 0.75);
    }

    #[test]
    fn ordered_and_tied() {
        assert_eq!(compute_auroc(&[1.0, 2.0, 3.0], &[false, true, true]).unwrap(), 1.0);
        assert_eq!(compute_auroc(&[0.5; 4], &[false, true, true, false]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_errors() {
        assert!(matches!(compute_auroc(&[0.1, 0.2], &[true, true]), Err(MlError::SingleClass)));
    }

    #[test]
    fn midranks_share_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.025), 0.25);
    }

    #[test]
    fn perfect_separation_bootstraps_to_one() {
        let s = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9];
        let l = [false, false, false, true, true, true];
        let ci = bootstrap_scores(&s, &l, 100, 5).unwrap();
        assert_eq!((ci.median, ci.ci_low, ci.ci_high), (1.0, 1.0, 1.0));
        assert_eq!(bootstrap_scores(&s, &l, 100, 5).unwrap(), ci);
    }
}
