use fwave_rank::config::BenchConfig;
use fwave_rank::features::{compute_spectral_features, featurize_window, welch, WindowId};
use fwave_rank::pipeline::analyze_lead;
use fwave_rank::record::WindowLabel;
use fwave_rank::sim::{dataset_configs, generate_dataset, simulate_record, DatasetSpec, SimConfig};
use fwave_rank::{detect_qrs, detect_qrs_secondary, extract, preprocess, FilterSpec, Method};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn burdens_cover_deciles() {
    let spec = DatasetSpec {
        n_records: 500,
        master_seed: 3,
        ..DatasetSpec::default()
    };
    let mut deciles = [0usize; 10];
    for (e, cfg) in dataset_configs(&spec).unwrap() {
        deciles[((e.af_burden * 10.0) as usize).min(9)] += 1;
        assert!((4.0..=9.0).contains(&cfg.f0));
    }
    for (i, &c) in deciles.iter().enumerate() {
        assert!(c.abs_diff(50) <= 20, "decile {i}: {c}");
    }
}

#[test]
fn single_record_dataset() {
    let spec = DatasetSpec {
        n_records: 1,
        duration: 60.0,
        ..DatasetSpec::default()
    };
    let data = generate_dataset(&spec).unwrap();
    assert_eq!(data.len(), 1);
    assert_eq!(data[0].0.record_id, "sim0000");
}

#[test]
fn true_fwave_peaks_at_fundamental() {
    for (i, f0) in [4.2, 6.0, 8.7].into_iter().enumerate() {
        let rec = simulate_record(&SimConfig {
            af_burden: 1.0,
            f0,
            duration: 120.0,
            seed: 30 + i as u64,
            ..SimConfig::default()
        })
        .unwrap();
        let psd = welch(&rec.truth.true_fwave, 200.0, 1024).unwrap();
        let daf = compute_spectral_features(&psd).daf;
        assert!((daf - f0).abs() <= 0.5, "f0 {f0}: daf {daf}");
    }
}

fn extracted_features(rec: &fwave_rank::sim::SimRecord) -> Vec<fwave_rank::FeatureVector> {
    let record = rec.to_record("sim");
    let cfg = BenchConfig::default();
    let analysis = analyze_lead(&record, "V1", &cfg).unwrap();
    analysis
        .windows
        .iter()
        .filter(|(w, _, _)| w.status.is_included())
        .map(|(w, qrs, _)| {
            let d = extract(Method::TsPca, &analysis.filtered[w.range()], qrs, &cfg.extract).unwrap();
            let id = WindowId {
                record_id: "sim".into(),
                lead: "V1".into(),
                window_idx: w.index,
            };
            featurize_window(&d, &id, w.label.unwrap(), 1024).unwrap()
        })
        .collect()
}

#[test]
fn true_fwave_windows_peak_at_fundamental() {
    let f0 = 7.3;
    let rec = simulate_record(&SimConfig {
        af_burden: 1.0,
        f0,
        seed: 42,
        ..SimConfig::default()
    })
    .unwrap();
    for start in (0..rec.len() - 12_000).step_by(12_000) {
        let qrs = fwave_rank::QrsAnnotations {
            r_peaks: rec.truth.slice(start..start + 12_000).true_r_peaks,
            fs: 200,
        };
        let d = fwave_rank::FwaveSignal::new(Method::Abs, rec.truth.true_fwave[start..start + 12_000].to_vec(), &qrs);
        let id = WindowId {
            record_id: "sim".into(),
            lead: "V1".into(),
            window_idx: start / 12_000,
        };
        let fv = featurize_window(&d, &id, WindowLabel::Af, 1024).unwrap();
        assert!((fv.daf - f0).abs() <= 0.5, "window at {start}: daf {}", fv.daf);
    }
}

#[test]
fn extracted_af_windows_sit_nearer_the_fundamental() {
    let (mut err_af, mut err_nsr) = (Vec::new(), Vec::new());
    for seed in 0..8u64 {
        let f0 = 4.0 + 0.6 * seed as f64;
        let rec = simulate_record(&SimConfig {
            af_burden: 0.5,
            f0,
            seed: 200 + seed,
            ..SimConfig::default()
        })
        .unwrap();
        for fv in extracted_features(&rec) {
            match fv.label {
                WindowLabel::Af => err_af.push((fv.daf - f0).abs()),
                WindowLabel::NonAf => err_nsr.push((fv.daf - f0).abs()),
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!err_af.is_empty() && !err_nsr.is_empty());
    assert!(mean(&err_af) < mean(&err_nsr), "AF {} vs NSR {}", mean(&err_af), mean(&err_nsr));
}

#[test]
fn nsr_window_has_weaker_dominant_peak() {
    let rec = simulate_record(&SimConfig {
        af_burden: 0.5,
        f0: 6.5,
        seed: 41,
        ..SimConfig::default()
    })
    .unwrap();
    let rows = extracted_features(&rec);
    let af: Vec<f64> = rows.iter().filter(|f| f.label == WindowLabel::Af).map(|f| f.p_daf).collect();
    let nsr: Vec<f64> = rows.iter().filter(|f| f.label == WindowLabel::NonAf).map(|f| f.p_daf).collect();
    assert!(!af.is_empty() && !nsr.is_empty());
    let weakest_af = af.iter().copied().fold(f64::INFINITY, f64::min);
    let strongest_nsr = nsr.iter().copied().fold(0.0, f64::max);
    assert!(strongest_nsr < weakest_af, "NSR {strongest_nsr} vs AF {weakest_af}");
}

fn matched(truth: &[usize], det: &[usize], tol: usize) -> usize {
    let mut j = 0;
    let mut hits = 0;
    for &t in truth {
        while j < det.len() && det[j] + tol < t {
            j += 1;
        }
        if j < det.len() && det[j].abs_diff(t) <= tol {
            hits += 1;
            j += 1;
        }
    }
    hits
}

#[test]
fn secondary_detector_on_clean_records() {
    for seed in 0..3 {
        let rec = simulate_record(&SimConfig {
            af_burden: 0.4,
            duration: 120.0,
            seed: 50 + seed,
            ..SimConfig::default()
        })
        .unwrap();
        let x = preprocess(&rec.ecg, 200.0, &FilterSpec::default()).unwrap();
        let det = detect_qrs_secondary(&x, 200).unwrap().r_peaks;
        let truth = &rec.truth.true_r_peaks;
        let se = matched(truth, &det, 10) as f64 / truth.len() as f64;
        assert!(se >= 0.97, "seed {seed}: {se}");
    }
}

#[test]
fn white_noise_rarely_triggers_detection() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = Normal::new(0.0, 0.02).unwrap();
    let x: Vec<f64> = (0..5 * 60 * 200).map(|_| z.sample(&mut rng)).collect();
    let x = preprocess(&x, 200.0, &FilterSpec::default()).unwrap();
    let per_min = detect_qrs_secondary(&x, 200).unwrap().len() as f64 / 5.0;
    assert!(per_min < 12.0, "{per_min}");
    assert!(detect_qrs(&vec![0.0; 12_000], 200).unwrap().is_empty());
}

#[test]
fn noise_channel_level() {
    let rec = simulate_record(&SimConfig {
        noise_rms: 100.0,
        seed: 60,
        ..SimConfig::default()
    })
    .unwrap();
    let rms_uv = 1000.0 * (rec.noise.iter().map(|v| v * v).sum::<f64>() / rec.noise.len() as f64).sqrt();
    assert!((95.0..=105.0).contains(&rms_uv), "{rms_uv}");
}
