use std::collections::BTreeSet;

use fwave_rank::ml::{
    bootstrap_auroc, compute_auroc, grid_search_cv, mann_whitney_u, split_train_test, train_forest, HyperGrid,
    RfHyperparams, Sample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const NAMES: [&str; 2] = ["x0", "x1"];

fn hp(depth: usize) -> RfHyperparams {
    RfHyperparams {
        n_estimators: 100,
        max_depth: depth,
        max_features: 2,
        max_samples: 0.5,
    }
}

fn clusters(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    (0..n)
        .map(|i| {
            let af = i % 2 == 0;
            let c = if af { 2.0 } else { -2.0 };
            (vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)], af)
        })
        .unzip()
}

#[test]
fn separable_clusters_train_perfectly() {
    let (x, y) = clusters(100, 1);
    let model = train_forest(&x, &y, &NAMES, hp(2), 9).unwrap();
    let scores = model.predict_proba(&x).unwrap();
    assert_eq!(compute_auroc(&scores, &y).unwrap(), 1.0);
}

#[test]
fn permuted_labels_score_near_chance() {
    let mut total = 0.0;
    for rep in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + rep);
        let x: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let y: Vec<bool> = (0..300).map(|i| i % 2 == 0).collect();
        let model = train_forest(&x[..200], &y[..200], &NAMES, hp(3), rep).unwrap();
        let scores = model.predict_proba(&x[200..]).unwrap();
        total += compute_auroc(&scores, &y[200..]).unwrap();
    }
    let mean = total / 20.0;
    assert!((0.4..=0.6).contains(&mean), "{mean}");
}

#[test]
fn stumps_only_at_depth_one() {
    let (x, y) = clusters(100, 2);
    let model = train_forest(&x, &y, &NAMES, hp(1), 3).unwrap();
    assert!(model.trees.iter().all(|t| t.depth() == 1));
}

fn xor_samples(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (a, b): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            Sample {
                record_id: format!("r{i:03}"),
                window_idx: 0,
                features: vec![a, b],
                is_af: (a > 0.0) != (b > 0.0),
            }
        })
        .collect()
}

#[test]
fn xor_needs_depth_two() {
    let samples = xor_samples(160, 4);
    let grid = HyperGrid {
        n_estimators: vec![100],
        max_depth: vec![1, 2, 3],
        max_features: vec![2],
        max_samples: vec![0.5],
    };
    let res = grid_search_cv(&samples, &grid, 5, 11).unwrap();
    assert!(res.best.max_depth >= 2, "{:?}", res.best);
    let depth1 = res.points.iter().find(|p| p.hyperparams.max_depth == 1).unwrap();
    assert!(res.best_auroc > depth1.mean_auroc + 0.2);
    assert_eq!(grid_search_cv(&samples, &grid, 5, 11).unwrap(), res);
}

#[test]
fn split_preserves_af_proportion() {
    // 100 records, 80 of them with AF windows.
    let samples: Vec<Sample> = (0..100)
        .flat_map(|r| {
            (0..3).map(move |w| Sample {
                record_id: format!("rec{r:03}"),
                window_idx: w,
                features: vec![r as f64, w as f64],
                is_af: r < 80 && w > 0,
            })
        })
        .collect();
    let (train, test) = split_train_test(&samples, 0.8, 21).unwrap();
    let records = |s: &[Sample]| s.iter().map(|x| x.record_id.clone()).collect::<BTreeSet<_>>();
    let af_records = |s: &[Sample]| s.iter().filter(|x| x.is_af).map(|x| x.record_id.clone()).collect::<BTreeSet<_>>();
    let (rt, rs) = (records(&train), records(&test));
    assert_eq!(rt.len(), 80);
    assert_eq!(rs.len(), 20);
    assert!(rt.is_disjoint(&rs));
    assert!(af_records(&test).len().abs_diff(16) <= 1);
    assert_eq!(split_train_test(&samples, 0.8, 21).unwrap(), (train, test));
}

#[test]
fn bootstrap_is_seeded() {
    let (x, y) = clusters(80, 5);
    let mut y = y;
    // Some label noise so the interval is not degenerate.
    for i in (0..80).step_by(9) {
        y[i] = !y[i];
    }
    let model = train_forest(&x[..50], &y[..50], &NAMES, hp(2), 1).unwrap();
    let a = bootstrap_auroc(&model, &x[50..], &y[50..], 200, 77).unwrap();
    let b = bootstrap_auroc(&model, &x[50..], &y[50..], 200, 77).unwrap();
    assert_eq!(a, b);
    assert!(a.ci_low <= a.median && a.median <= a.ci_high);
}

#[test]
fn shifted_normals_differ_significantly() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let z = Normal::new(0.0, 1.0).unwrap();
    let a: Vec<f64> = (0..100).map(|_| z.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..100).map(|_| 3.0 + z.sample(&mut rng)).collect();
    let r = mann_whitney_u(&a, &b).unwrap();
    assert!(!r.exact);
    assert!(r.p_value < 1e-6, "{}", r.p_value);
}
