use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fwrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fwrank"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn fwrank")
}

fn simulate(dir: &Path, n: usize, seed: u64) -> Output {
    fwrank(&[
        "simulate",
        "--n-records",
        &n.to_string(),
        "--noise-rms",
        "100",
        "--seed",
        &seed.to_string(),
        "--duration",
        "120",
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn simulate_writes_records_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(simulate(&a, 20, 7).status.success());
    assert!(simulate(&b, 20, 7).status.success());
    let dirs = fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 20);
    for f in ["signal.csv", "annotations.json", "meta.json", "truth.csv"] {
        assert!(a.join("sim0000").join(f).is_file(), "{f}");
    }
    let ma = fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(ma, fs::read(b.join("manifest.json")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&ma).unwrap();
    assert_eq!(manifest["records"].as_array().unwrap().len(), 20);
}

#[test]
fn negative_noise_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fwrank(&["simulate", "--noise-rms", "-1", "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&out.stderr).contains("noise_rms"));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn missing_dataset_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bench.toml");
    fs::write(&cfg, "output_dir = \"out\"\n[dataset]\npath = \"nowhere\"\n").unwrap();
    let out = fwrank(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn bad_config_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bench.toml");
    fs::write(&cfg, "methods = []\n[dataset]\npath = \"d\"\n").unwrap();
    assert_eq!(fwrank(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn run_single_method_then_stats_and_extract() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(simulate(&data, 16, 3).status.success());
    let cfg = tmp.path().join("bench.toml");
    fs::write(
        &cfg,
        r#"methods = ["ABS"]
output_dir = "out"
seed = 5

[dataset]
path = "data"

[ml]
folds = 2
bootstrap_rounds = 20

[ml.grid]
n_estimators = [100]
max_depth = [2]
max_features = [2]
max_samples = [0.5]
"#,
    )
    .unwrap();
    let out = fwrank(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("out");
    for f in ["features.csv", "windows.csv", "census.csv", "report.json", "report.csv", "manifest.json", "rms_error.csv"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap();
    let results = report["ranking"]["results"].as_array().unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(results[0]["method"], "ABS");

    let stats = tmp.path().join("stats");
    let out = fwrank(&[
        "stats",
        "--features",
        dir.join("features.csv").to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        stats.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sex = fs::read_to_string(stats.join("stats_sex.csv")).unwrap();
    assert!(sex.starts_with("lead,method,feature,"));
    assert!(stats.join("stats_box.csv").is_file());

    let dump = tmp.path().join("w.csv");
    let out = fwrank(&[
        "extract",
        "--record",
        data.join("sim0000").to_str().unwrap(),
        "--lead",
        "V1",
        "--window",
        "1",
        "--methods",
        "ABS,TS_PCA",
        "--out",
        dump.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&dump).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sample,ecg,qrs,ABS,TS_PCA"));
    assert_eq!(lines.count(), 60 * 200);
    assert!(text.lines().nth(1).unwrap().starts_with("12000,"));
}

#[test]
fn extract_missing_window() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert!(simulate(&data, 1, 1).status.success());
    let out = fwrank(&[
        "extract",
        "--record",
        data.join("sim0000").to_str().unwrap(),
        "--lead",
        "V1",
        "--window",
        "9",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["noisy.toml", "noise_free.toml", "records.toml"] {
        let cfg = fwave_rank::config::BenchConfig::from_file(&dir.join(name));
        assert!(cfg.is_ok(), "{name}: {:?}", cfg.err());
    }
}
