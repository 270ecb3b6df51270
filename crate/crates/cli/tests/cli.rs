use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use hrvfair_cli::run;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn data_args(dir: &Path, protected: &str) -> Vec<String> {
    vec![
        "--windows".into(),
        dir.join("windows.csv").display().to_string(),
        "--labels".into(),
        dir.join("labels.csv").display().to_string(),
        "--demo".into(),
        dir.join("demographics.csv").display().to_string(),
        "--protected".into(),
        protected.into(),
    ]
}

fn argv(cmd: &str, rest: Vec<String>) -> Vec<String> {
    ["hrvfair".to_string(), cmd.to_string()].into_iter().chain(rest).collect()
}

const TINY: [&str; 12] = [
    "--epochs", "5", "--ckpt-every", "5", "--mc-passes", "3", "--hidden", "4", "--dense", "3", "--batch-size", "16",
];

fn tiny_train(data: &Path, out: &Path) -> Vec<String> {
    let mut a = data_args(data, "group");
    a.extend(TINY.iter().map(|s| s.to_string()));
    a.extend(["--seed".into(), "3".into(), "--out".into(), out.display().to_string()]);
    a
}

#[test]
fn audit_on_bundled_fixture() {
    let out = tempfile::tempdir().unwrap();
    let mut a = data_args(&fixtures(), "group");
    a.extend(["--out".into(), out.path().display().to_string()]);
    assert_eq!(run(argv("audit", a)), 0);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["attribute"], "group");
    assert_eq!(report["bounds"], serde_json::json!([0.8, 1.2]));
    assert!(report["dir"].as_f64().unwrap() > 0.0);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "audit");
    assert_eq!(manifest["artifacts"]["report.json"].as_str().unwrap().len(), 64);
    assert!(out.path().join("config.json").exists());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(["hrvfair", "audit", "--bogus-flag"]), 2);
    assert_eq!(run(["hrvfair", "frobnicate"]), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_hrvfair")).args(["synth", "--nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_labels_file_exits_one_naming_path() {
    let out = tempfile::tempdir().unwrap();
    let mut a = data_args(&fixtures(), "group");
    let missing = out.path().join("no_such_labels.csv");
    a[3] = missing.display().to_string();
    a.extend(["--out".into(), out.path().join("run").display().to_string()]);
    let res = Command::new(env!("CARGO_BIN_EXE_hrvfair")).arg("audit").args(&a).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("no_such_labels.csv"));
}

#[test]
fn unknown_protected_attribute_is_a_data_error() {
    let out = tempfile::tempdir().unwrap();
    let mut a = data_args(&fixtures(), "age");
    a.extend(["--out".into(), out.path().display().to_string()]);
    assert_eq!(run(argv("audit", a)), 1);
}

#[test]
fn synth_then_audit_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let a = vec!["--n".into(), "200".into(), "--bias".into(), "1.0".into(), "--seed".into(), "5".into(), "--out".into(), data.display().to_string()];
    assert_eq!(run(argv("synth", a)), 0);
    for f in ["windows.csv", "labels.csv", "demographics.csv", "catalog.json", "report.json", "manifest.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
    assert!(!data.join(".staging").exists());
    let mut a = data_args(&data, "group");
    a.extend(["--out".into(), dir.path().join("audit").display().to_string()]);
    assert_eq!(run(argv("audit", a)), 0);
    let synth: serde_json::Value = serde_json::from_slice(&fs::read(data.join("report.json")).unwrap()).unwrap();
    let audit: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("audit/report.json")).unwrap()).unwrap();
    assert_eq!(synth["dir"], audit["dir"]);
    assert!(audit["dir"].as_f64().unwrap() <= 0.6);
}

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn mitigate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("run");
    assert_eq!(run(argv("mitigate", tiny_train(&fixtures(), &a))), 0);
    let first = read_tree(&a);
    fs::remove_dir_all(&a).unwrap();
    assert_eq!(run(argv("mitigate", tiny_train(&fixtures(), &a))), 0);
    let second = read_tree(&a);
    let names: Vec<String> = first.iter().map(|(p, _)| p.display().to_string()).collect();
    for f in ["checkpoints/ckpt_epoch_5.bin", "uncertainty.json", "selection.json", "model.bin", "report.json", "manifest.json"] {
        assert!(names.iter().any(|n| n == f), "{f} missing");
    }
    assert_eq!(first, second);
    let sel: serde_json::Value = serde_json::from_slice(&fs::read(a.join("selection.json")).unwrap()).unwrap();
    assert_eq!(sel["chosen_epoch"], 5);
    let recs: serde_json::Value = serde_json::from_slice(&fs::read(a.join("uncertainty.json")).unwrap()).unwrap();
    assert_eq!(recs.as_array().unwrap().len(), 1);
    for key in ["epoch", "c_anxiety", "c_protected", "gap"] {
        assert!(recs[0].get(key).is_some());
    }
}

#[test]
fn train_then_saliency() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("base");
    assert_eq!(run(argv("train-base", tiny_train(&fixtures(), &train))), 0);
    assert!(train.join("predictions.csv").exists());
    let mut a = data_args(&fixtures(), "group");
    a.extend([
        "--model".into(),
        train.join("model.bin").display().to_string(),
        "--seed".into(),
        "3".into(),
        "--out".into(),
        dir.path().join("sal").display().to_string(),
    ]);
    assert_eq!(run(argv("saliency", a.clone())), 0);
    let csv = fs::read_to_string(dir.path().join("sal/saliency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 25);
    assert!(dir.path().join("sal/saliency.svg").exists());
    a.extend(["--head".into(), "protected".into()]);
    assert_eq!(run(argv("saliency", a)), 1);

    let mut p = data_args(&fixtures(), "group");
    p.extend([
        "--predictions".into(),
        train.join("predictions.csv").display().to_string(),
        "--out".into(),
        dir.path().join("pa").display().to_string(),
    ]);
    // Predictions cover the test split only.
    assert_eq!(run(argv("audit", p)), 1);
}

#[test]
fn reweigh_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(argv("reweigh-train", tiny_train(&fixtures(), &dir.path().join("rw")))), 0);
    let w: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("rw/weights.json")).unwrap()).unwrap();
    assert_eq!(w["table"].as_array().unwrap().len(), 2);
    assert_eq!(run(argv("compare", tiny_train(&fixtures(), &dir.path().join("cmp")))), 0);
    let text = fs::read_to_string(dir.path().join("cmp/comparison.txt")).unwrap();
    for row in ["Accuracy", "F1", "DI Ratio", "Diff in FN", "Diff in FP"] {
        assert!(text.contains(row), "{row}");
    }
}

#[test]
fn extract_from_nni_files() {
    let dir = tempfile::tempdir().unwrap();
    let nni = dir.path().join("a.csv");
    let body: String = (0..60).map(|i| format!("{}\n", 800.0 + 40.0 * (i as f64 * 0.7).sin())).collect();
    fs::write(&nni, format!("interval_ms\n{body}")).unwrap();
    let flat = dir.path().join("b.csv");
    fs::write(&flat, format!("interval_ms\n{}", "800\n".repeat(20))).unwrap();
    let out = dir.path().join("feat");
    let a = vec!["--nni".into(), nni.display().to_string(), flat.display().to_string(), "--out".into(), out.display().to_string()];
    assert_eq!(run(argv("extract", a)), 0);
    let csv = fs::read_to_string(out.join("features.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0].split(',').count(), 25);
    assert!(lines[0].starts_with("mean_nni,sdnn,sdsd"));
    let sources: serde_json::Value = serde_json::from_slice(&fs::read(out.join("sources.json")).unwrap()).unwrap();
    assert_eq!(sources[1]["poincare_degenerate"], true);
}
