//! Two-sample rank test and age stratification.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::metrics::midranks;
use super::MlError;

/// Largest smaller-sample size tested with the exact distribution.
pub const EXACT_MAX_N: usize = 8;

pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `min(U_a, U_b)`.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

impl MannWhitney {
    pub fn significant(&self) -> bool {
        self.p_value < SIGNIFICANCE
    }
}

/// Two-sided Mann–Whitney U test.
///
/// When the smaller sample has at most [`EXACT_MAX_N`] values, `p` is the
/// share of all assignments of the pooled midranks whose rank sum lies at
/// least as far from its mean as the observed one. Otherwise a normal
/// approximation with tie and continuity corrections is used.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, MlError> {
    if a.is_empty() || b.is_empty() {
        return Err(MlError::EmptySample);
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let ra: f64 = ranks[..na].iter().sum();
    let ua = ra - (na * (na + 1)) as f64 / 2.0;
    let ub = (na * nb) as f64 - ua;
    let u = ua.min(ub);

    if na.min(nb) <= EXACT_MAX_N {
        // Doubled midranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let (small, k) = if na <= nb { (&doubled[..na], na) } else { (&doubled[na..], nb) };
        let observed: usize = small.iter().sum();
        let expected = k * (n + 1);
        let dist = subset_sum_counts(&doubled, k);
        let far = observed.abs_diff(expected);
        let total: u128 = dist.iter().sum();
        let hits: u128 = dist
            .iter()
            .enumerate()
            .filter(|(s, _)| s.abs_diff(expected) >= far)
            .map(|(_, c)| c)
            .sum();
        return Ok(MannWhitney {
            u,
            p_value: hits as f64 / total as f64,
            exact: true,
        });
    }

    let mut sorted = pooled;
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let (fa, fb, fnn) = (na as f64, nb as f64, n as f64);
    let var = fa * fb / 12.0 * ((fnn + 1.0) - tie_term / (fnn * (fnn - 1.0)));
    let mean = fa * fb / 2.0;
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((ua - mean).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(MannWhitney { u, p_value, exact: false })
}

/// `counts[s]` = number of `k`-subsets of `values` summing to `s`.
fn subset_sum_counts(values: &[usize], k: usize) -> Vec<u128> {
    let max_sum: usize = {
        let mut v = values.to_vec();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v.iter().take(k).sum()
    };
    // table[j][s]: subsets of size j with sum s.
    let mut table = vec![vec![0u128; max_sum + 1]; k + 1];
    table[0][0] = 1;
    for &v in values {
        for j in (1..=k).rev() {
            let (lower, upper) = table.split_at_mut(j);
            let prev = &lower[j - 1];
            let cur = &mut upper[0];
            for s in (v..=max_sum).rev() {
                cur[s] += prev[s - v];
            }
        }
    }
    table.swap_remove(k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeGroup {
    #[serde(rename = "<60")]
    Under60,
    #[serde(rename = "60-74")]
    From60To74,
    #[serde(rename = ">=75")]
    From75,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 3] = [AgeGroup::Under60, AgeGroup::From60To74, AgeGroup::From75];

    pub fn of(age: u32) -> Self {
        match age {
            0..=59 => AgeGroup::Under60,
            60..=74 => AgeGroup::From60To74,
            _ => AgeGroup::From75,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgeGroup::Under60 => "<60",
            AgeGroup::From60To74 => "60-74",
            AgeGroup::From75 => ">=75",
        }
    }
}

/// Buckets items into `[0,60)`, `[60,75)` and `[75,∞)`; items without an
/// age are dropped.
pub fn stratify_age<T: Clone>(items: &[T], age: impl Fn(&T) -> Option<u32>) -> [Vec<T>; 3] {
    let mut groups: [Vec<T>; 3] = Default::default();
    for item in items {
        if let Some(a) = age(item) {
            groups[AgeGroup::of(a) as usize].push(item.clone());
        }
    }
    groups
}
