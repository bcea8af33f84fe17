use std::collections::BTreeMap;

use fwave_rank::features::FEATURE_NAMES;
use fwave_rank::pipeline::compute_stats;
use fwave_rank::record::{RecordMeta, Sex, WindowLabel};
use fwave_rank::{FeatureVector, Method};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn row(record: usize, window: usize, a_pp: f64, label: WindowLabel) -> FeatureVector {
    FeatureVector {
        record_id: format!("r{record:03}"),
        lead: "V1".into(),
        window_idx: window,
        method: Method::TsPca,
        label,
        a_pp: Some(a_pp),
        daf: 5.0 + (window % 4) as f64,
        p_daf: 0.1 * (1 + record % 3) as f64,
        p_in: 1.0 + (record % 5) as f64,
        p_out: 0.5 + (window % 2) as f64,
    }
}

fn cohort(n: usize, a_pp: impl Fn(usize, usize) -> f64) -> Vec<FeatureVector> {
    (0..n)
        .flat_map(|r| (0..3).map(move |w| (r, w)))
        .map(|(r, w)| row(r, w, a_pp(r, w), WindowLabel::Af))
        .collect()
}

fn meta(n: usize, age: impl Fn(usize) -> Option<u32>) -> BTreeMap<String, RecordMeta> {
    (0..n)
        .map(|r| {
            (
                format!("r{r:03}"),
                RecordMeta {
                    age: age(r),
                    sex: Some(if r % 2 == 0 { Sex::F } else { Sex::M }),
                },
            )
        })
        .collect()
}

#[test]
fn missing_ages_leave_sex_analysis() {
    let rows = cohort(20, |r, w| 0.1 + 0.01 * ((r * 7 + w) % 5) as f64);
    let report = compute_stats(&rows, &meta(20, |_| None));
    assert_eq!(report.sex.len(), FEATURE_NAMES.len());
    assert!(report.boxes.iter().all(|b| b.grouping == "sex"));
    assert!(report.warnings.iter().any(|w| w.contains("age")));
}

#[test]
fn identical_groups_give_unit_p_values() {
    // Records 2k and 2k+1 carry the same rows, so both sexes see identical samples.
    let rows: Vec<FeatureVector> = (0..20)
        .flat_map(|r| (0..3).map(move |w| row(r, w, 0.2 + 0.05 * ((r / 2 + w) % 4) as f64, WindowLabel::Af)))
        .map(|mut f| {
            let r: usize = f.record_id[1..].parse().unwrap();
            f.p_daf = 0.1 * (1 + (r / 2) % 3) as f64;
            f.p_in = 1.0 + ((r / 2) % 5) as f64;
            f
        })
        .collect();
    let report = compute_stats(&rows, &meta(20, |r| Some(40 + r as u32)));
    assert_eq!(report.sex.len(), FEATURE_NAMES.len());
    for t in &report.sex {
        assert_eq!(t.p_value, 1.0, "{}", t.feature);
    }
}

#[test]
fn injected_amplitude_difference_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let jitter: Vec<f64> = (0..120).map(|_| rng.gen_range(-0.02..0.02)).collect();
    let rows = cohort(40, |r, w| if r % 2 == 0 { 0.10 } else { 0.14 } + jitter[r * 3 + w]);
    let report = compute_stats(&rows, &meta(40, |r| Some(50 + r as u32)));
    let a_pp = report.sex.iter().find(|t| t.feature == "a_pp").unwrap();
    assert!(a_pp.p_value < 0.05 && a_pp.significant, "{}", a_pp.p_value);
    let ages: Vec<&str> = report
        .boxes
        .iter()
        .filter(|b| b.grouping == "age" && b.feature == "a_pp")
        .map(|b| b.group.as_str())
        .collect();
    assert_eq!(ages, vec!["<60", "60-74", ">=75"]);
}

#[test]
fn non_af_rows_are_ignored() {
    let mut rows = cohort(10, |_, _| 0.1);
    rows.push(row(0, 9, 50.0, WindowLabel::NonAf));
    let report = compute_stats(&rows, &meta(10, |_| Some(70)));
    let b = report.boxes.iter().find(|b| b.feature == "a_pp" && b.group == "F").unwrap();
    assert_eq!(b.n, 15);
    assert_eq!(b.q3, 0.1);
}
