//! Random forest of axis-aligned Gini trees.
//!
//! Each node draws its candidate features from an RNG seeded by the tree
//! seed and the node's heap index, and each tree's bootstrap sample depends
//! only on the tree seed and `max_samples`. A forest grown deeper or with
//! more trees therefore contains every shallower or smaller forest from the
//! same seed as a truncation or prefix, which is what lets the grid search
//! score all depths and tree counts from one fit.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MlError;
use crate::rng::{derive_seed, rng_for};

/// Version tag written into serialised models.
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub const GRID_N_ESTIMATORS: [usize; 4] = [100, 200, 300, 1000];
pub const GRID_MAX_DEPTH: [usize; 6] = [1, 2, 3, 4, 5, 6];
pub const GRID_MAX_FEATURES: [usize; 2] = [2, 6];
pub const GRID_MAX_SAMPLES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfHyperparams {
    pub n_estimators: usize,
    pub max_depth: usize,
    /// Candidate features per split; clamped to the number of features.
    pub max_features: usize,
    /// Bootstrap size as a fraction of the training rows.
    pub max_samples: f64,
}

impl RfHyperparams {
    pub fn validate(&self) -> Result<(), MlError> {
        let ok = GRID_N_ESTIMATORS.contains(&self.n_estimators)
            && GRID_MAX_DEPTH.contains(&self.max_depth)
            && GRID_MAX_FEATURES.contains(&self.max_features)
            && GRID_MAX_SAMPLES.contains(&self.max_samples);
        if ok {
            Ok(())
        } else {
            Err(MlError::OffGrid(format!("{self:?}")))
        }
    }
}

/// Candidate values for each hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub max_features: Vec<usize>,
    pub max_samples: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            n_estimators: GRID_N_ESTIMATORS.to_vec(),
            max_depth: GRID_MAX_DEPTH.to_vec(),
            max_features: GRID_MAX_FEATURES.to_vec(),
            max_samples: GRID_MAX_SAMPLES.to_vec(),
        }
    }
}

impl HyperGrid {
    pub fn single(hp: RfHyperparams) -> Self {
        Self {
            n_estimators: vec![hp.n_estimators],
            max_depth: vec![hp.max_depth],
            max_features: vec![hp.max_features],
            max_samples: vec![hp.max_samples],
        }
    }

    pub fn len(&self) -> usize {
        self.n_estimators.len() * self.max_depth.len() * self.max_features.len() * self.max_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<RfHyperparams> {
        let mut out = Vec::with_capacity(self.len());
        for &n_estimators in &self.n_estimators {
            for &max_depth in &self.max_depth {
                for &max_features in &self.max_features {
                    for &max_samples in &self.max_samples {
                        out.push(RfHyperparams {
                            n_estimators,
                            max_depth,
                            max_features,
                            max_samples,
                        });
                    }
                }
            }
        }
        out
    }

    /// Every value must come from the published search space.
    pub fn validate(&self) -> Result<(), MlError> {
        if self.is_empty() {
            return Err(MlError::OffGrid("empty grid".into()));
        }
        self.points().iter().try_for_each(RfHyperparams::validate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// AF fraction among the bootstrap rows reaching this node.
    pub af_fraction: f64,
    /// `(feature, threshold, left, right)`; rows with `x <= threshold` go left.
    pub split: Option<(usize, f64, usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// AF fraction of the node reached after at most `depth` splits.
    pub fn predict_at_depth(&self, row: &[f64], depth: usize) -> f64 {
        let mut node = &self.nodes[0];
        for _ in 0..depth {
            match node.split {
                Some((f, t, l, r)) => node = &self.nodes[if row[f] <= t { l } else { r }],
                None => break,
            }
        }
        node.af_fraction
    }

    /// Fractions after 1, 2, ..., `out.len()` splits.
    pub fn predict_staged(&self, row: &[f64], out: &mut [f64]) {
        let mut node = &self.nodes[0];
        for slot in out.iter_mut() {
            if let Some((f, t, l, r)) = node.split {
                node = &self.nodes[if row[f] <= t { l } else { r }];
            }
            *slot = node.af_fraction;
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i].split {
                Some((_, _, l, r)) => 1 + walk(nodes, l).max(walk(nodes, r)),
                None => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    n_features: usize,
    max_features: usize,
    max_depth: usize,
    seed: u64,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize, heap_id: u64) -> usize {
        let n = rows.len();
        let n_af = rows.iter().filter(|&&r| self.y[r]).count();
        let id = self.nodes.len();
        self.nodes.push(Node {
            af_fraction: if n > 0 { n_af as f64 / n as f64 } else { 0.0 },
            split: None,
        });
        if depth >= self.max_depth || n < 2 || n_af == 0 || n_af == n {
            return id;
        }
        let mut rng = rng_for(self.seed, &[heap_id]);
        let features = index::sample(&mut rng, self.n_features, self.max_features);
        let Some((feature, threshold)) = self.best_split(rows, features.iter(), n_af) else {
            return id;
        };
        let x = self.x;
        rows.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]).then(a.cmp(&b)));
        let cut = rows.partition_point(|&r| x[r][feature] <= threshold);
        let (left_rows, right_rows) = rows.split_at_mut(cut);
        let left = self.grow(left_rows, depth + 1, heap_id * 2);
        let right = self.grow(right_rows, depth + 1, heap_id * 2 + 1);
        self.nodes[id].split = Some((feature, threshold, left, right));
        id
    }

    /// Feature and threshold minimising the weighted Gini impurity of the
    /// children. Earlier-drawn features and lower thresholds win ties.
    fn best_split(&self, rows: &[usize], features: impl Iterator<Item = usize>, n_af: usize) -> Option<(usize, f64)> {
        let n = rows.len();
        let mut order = rows.to_vec();
        let mut best: Option<(f64, usize, f64)> = None;
        for f in features {
            let x = self.x;
            order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
            let mut left_af = 0usize;
            for i in 0..n - 1 {
                if self.y[order[i]] {
                    left_af += 1;
                }
                let (v, next) = (x[order[i]][f], x[order[i + 1]][f]);
                if v >= next {
                    continue;
                }
                let nl = (i + 1) as f64;
                let nr = (n - i - 1) as f64;
                let al = left_af as f64;
                let ar = (n_af - left_af) as f64;
                // n * weighted Gini, up to a constant.
                let score = -(al * al + (nl - al) * (nl - al)) / nl - (ar * ar + (nr - ar) * (nr - ar)) / nr;
                if best.is_none_or(|(s, _, _)| score < s) {
                    let mut t = 0.5 * (v + next);
                    if t >= next {
                        t = v;
                    }
                    best = Some((score, f, t));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Bootstrap row indices for one tree.
fn bootstrap(n: usize, max_samples: f64, seed: u64) -> Vec<usize> {
    let mut rng = rng_for(seed, &[u64::MAX]);
    let draws = ((max_samples * n as f64).round() as usize).max(1);
    (0..draws).map(|_| rng.gen_range(0..n)).collect()
}

/// Seed of tree `index` in a forest trained with `seed`.
pub fn tree_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[index as u64])
}

pub fn train_tree(
    x: &[Vec<f64>],
    y: &[bool],
    max_depth: usize,
    max_features: usize,
    max_samples: f64,
    seed: u64,
) -> Tree {
    let n_features = x.first().map_or(0, Vec::len);
    let mut rows = bootstrap(x.len(), max_samples, seed);
    let mut g = Grower {
        x,
        y,
        n_features,
        max_features: max_features.clamp(1, n_features.max(1)),
        max_depth,
        seed,
        nodes: Vec::new(),
    };
    g.grow(&mut rows, 0, 1);
    Tree { nodes: g.nodes }
}

fn check_training(x: &[Vec<f64>], y: &[bool]) -> Result<usize, MlError> {
    if x.len() != y.len() {
        return Err(MlError::LengthMismatch {
            rows: x.len(),
            labels: y.len(),
        });
    }
    let n_features = x.first().map_or(0, Vec::len);
    if n_features == 0 || x.iter().any(|r| r.len() != n_features) {
        return Err(MlError::ColumnMismatch {
            expected: n_features,
            found: x.iter().map(Vec::len).find(|&l| l != n_features).unwrap_or(0),
        });
    }
    if !(y.iter().any(|&v| v) && y.iter().any(|&v| !v)) {
        return Err(MlError::SingleClass);
    }
    Ok(n_features)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedForest {
    pub version: u32,
    pub trees: Vec<Tree>,
    pub hyperparams: RfHyperparams,
    /// `max_features` after clamping to the available features.
    pub effective_max_features: usize,
    pub seed: u64,
    pub feature_names: Vec<String>,
}

/// Trains `n_estimators` trees, each on a bootstrap of
/// `max_samples * n` rows, with `max_features` candidates per split.
pub fn train_forest(
    x: &[Vec<f64>],
    y: &[bool],
    feature_names: &[&str],
    hp: RfHyperparams,
    seed: u64,
) -> Result<TrainedForest, MlError> {
    let n_features = check_training(x, y)?;
    if feature_names.len() != n_features {
        return Err(MlError::ColumnMismatch {
            expected: n_features,
            found: feature_names.len(),
        });
    }
    if !(hp.max_samples > 0.0 && hp.max_samples <= 1.0) || hp.n_estimators == 0 {
        return Err(MlError::OffGrid(format!("{hp:?}")));
    }
    use rayon::prelude::*;
    let trees = (0..hp.n_estimators)
        .into_par_iter()
        .map(|i| train_tree(x, y, hp.max_depth, hp.max_features, hp.max_samples, tree_seed(seed, i)))
        .collect();
    Ok(TrainedForest {
        version: MODEL_FORMAT_VERSION,
        trees,
        hyperparams: hp,
        effective_max_features: hp.max_features.min(n_features),
        seed,
        feature_names: feature_names.iter().map(|s| s.to_string()).collect(),
    })
}

impl TrainedForest {
    /// Mean AF fraction over trees, per row.
    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<f64>, MlError> {
        let p = self.feature_names.len();
        if let Some(bad) = x.iter().find(|r| r.len() != p) {
            return Err(MlError::ColumnMismatch {
                expected: p,
                found: bad.len(),
            });
        }
        let depth = self.hyperparams.max_depth;
        Ok(x.iter()
            .map(|row| {
                self.trees.iter().map(|t| t.predict_at_depth(row, depth)).sum::<f64>() / self.trees.len() as f64
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, MlError> {
        let f: TrainedForest = serde_json::from_str(text).map_err(|e| MlError::Model(e.to_string()))?;
        if f.version != MODEL_FORMAT_VERSION {
            return Err(MlError::Model(format!("unsupported model version {}", f.version)));
        }
        Ok(f)
    }
}

/// Scores for every `(n_estimators, max_depth)` pair from one forest grown
/// with the largest of each. `scores[d][e][row]` uses `depths[d]` and the
/// first `counts[e]` trees.
#[allow(clippy::too_many_arguments)]
pub fn staged_scores(
    x_train: &[Vec<f64>],
    y_train: &[bool],
    x_eval: &[Vec<f64>],
    counts: &[usize],
    depths: &[usize],
    max_features: usize,
    max_samples: f64,
    seed: u64,
) -> Vec<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    let max_depth = depths.iter().copied().max().unwrap_or(1);
    let max_trees = counts.iter().copied().max().unwrap_or(0);
    let trees: Vec<Tree> = (0..max_trees)
        .into_par_iter()
        .map(|i| train_tree(x_train, y_train, max_depth, max_features, max_samples, tree_seed(seed, i)))
        .collect();

    // cumulative[d][row] running sums over trees, snapshotted at each count.
    let mut sums = vec![vec![0.0; x_eval.len()]; max_depth];
    let mut out = vec![vec![Vec::new(); counts.len()]; depths.len()];
    let mut staged = vec![0.0; max_depth];
    let mut sorted_counts: Vec<(usize, usize)> = counts.iter().copied().enumerate().map(|(i, c)| (c, i)).collect();
    sorted_counts.sort_unstable();
    let mut next = 0;
    for (t, tree) in trees.iter().enumerate() {
        for (r, row) in x_eval.iter().enumerate() {
            tree.predict_staged(row, &mut staged);
            for d in 0..max_depth {
                sums[d][r] += staged[d];
            }
        }
        while next < sorted_counts.len() && sorted_counts[next].0 == t + 1 {
            let (c, e) = sorted_counts[next];
            for (di, &depth) in depths.iter().enumerate() {
                out[di][e] = sums[depth - 1].iter().map(|s| s / c as f64).collect();
            }
            next += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(n: usize, depth: usize) -> RfHyperparams {
        RfHyperparams {
            n_estimators: n,
            max_depth: depth,
            max_features: 2,
            max_samples: 0.9,
        }
    }

    fn clusters() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let j = (i * 37 % 17) as f64 / 17.0;
            x.push(vec![j, 5.0 + j]);
            y.push(false);
            x.push(vec![10.0 + j, 15.0 - j]);
            y.push(true);
        }
        (x, y)
    }

    #[test]
    fn stumps_have_depth_one() {
        let (x, y) = clusters();
        let f = train_forest(&x, &y, &["a", "b"], hp(100, 1), 3).unwrap();
        assert_eq!(f.trees.len(), 100);
        assert!(f.trees.iter().all(|t| t.depth() == 1));
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            train_forest(&x, &[true, true], &["a"], hp(100, 2), 0),
            Err(MlError::SingleClass)
        ));
    }

    #[test]
    fn column_mismatch_on_predict() {
        let (x, y) = clusters();
        let f = train_forest(&x, &y, &["a", "b"], hp(100, 2), 3).unwrap();
        assert!(matches!(
            f.predict_proba(&[vec![1.0, 2.0, 3.0]]),
            Err(MlError::ColumnMismatch { .. })
        ));
    }

    #[test]
    fn deterministic() {
        let (x, y) = clusters();
        let a = train_forest(&x, &y, &["a", "b"], hp(100, 3), 9).unwrap();
        let b = train_forest(&x, &y, &["a", "b"], hp(100, 3), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(TrainedForest::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn unanimous_trees_score_one() {
        let tree = Tree {
            nodes: vec![Node {
                af_fraction: 1.0,
                split: None,
            }],
        };
        let f = TrainedForest {
            version: MODEL_FORMAT_VERSION,
            trees: vec![tree; 5],
            hyperparams: hp(100, 1),
            effective_max_features: 1,
            seed: 0,
            feature_names: vec!["a".into()],
        };
        assert_eq!(f.predict_proba(&[vec![0.3]]).unwrap(), vec![1.0]);
    }

    #[test]
    fn half_leaf_scores_half() {
        let f = TrainedForest {
            version: MODEL_FORMAT_VERSION,
            trees: vec![Tree {
                nodes: vec![
                    Node { af_fraction: 0.5, split: Some((0, 0.0, 1, 2)) },
                    Node { af_fraction: 0.5, split: None },
                    Node { af_fraction: 0.5, split: None },
                ],
            }],
            hyperparams: hp(100, 1),
            effective_max_features: 1,
            seed: 0,
            feature_names: vec!["a".into()],
        };
        assert_eq!(f.predict_proba(&[vec![-1.0], vec![1.0]]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn score_grows_with_agreeing_trees() {
        let leaf = |p: f64| Tree { nodes: vec![Node { af_fraction: p, split: None }] };
        let mut last = -1.0;
        for agree in 0..=4 {
            let trees: Vec<Tree> = (0..4).map(|i| leaf(if i < agree { 1.0 } else { 0.0 })).collect();
            let f = TrainedForest {
                version: MODEL_FORMAT_VERSION,
                trees,
                hyperparams: hp(100, 1),
                effective_max_features: 1,
                seed: 0,
                feature_names: vec!["a".into()],
            };
            let s = f.predict_proba(&[vec![0.0]]).unwrap()[0];
            assert!(s > last);
            last = s;
        }
    }

    #[test]
    fn truncated_forest_matches_direct_training() {
        let (x, y) = clusters();
        let mut noisy_y = y.clone();
        for i in (0..noisy_y.len()).step_by(7) {
            noisy_y[i] = !noisy_y[i];
        }
        let eval: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.5, 15.0 - i as f64 * 0.3]).collect();
        let staged = staged_scores(&x, &noisy_y, &eval, &[100, 200], &[1, 2, 3, 4, 5, 6], 2, 0.5, 21);
        for (di, depth) in [1usize, 2, 3, 4, 5, 6].into_iter().enumerate() {
            for (ei, n) in [100usize, 200].into_iter().enumerate() {
                let hp = RfHyperparams {
                    n_estimators: n,
                    max_depth: depth,
                    max_features: 2,
                    max_samples: 0.5,
                };
                let direct = train_forest(&x, &noisy_y, &["a", "b"], hp, 21).unwrap();
                let p = direct.predict_proba(&eval).unwrap();
                for (a, b) in p.iter().zip(&staged[di][ei]) {
                    assert!((a - b).abs() < 1e-12, "depth {depth} trees {n}");
                }
            }
        }
    }

    #[test]
    fn grid_has_240_points() {
        assert_eq!(HyperGrid::default().len(), 240);
        assert!(HyperGrid::default().validate().is_ok());
        let mut g = HyperGrid::default();
        g.max_depth.push(7);
        assert!(g.validate().is_err());
    }
}
