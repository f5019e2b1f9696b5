use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn headprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headprobe")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(out: &Path, clean: usize, backdoor: usize, seed: &str) {
    let o = headprobe(&[
        "synth", "--clean", &clean.to_string(), "--backdoor", &backdoor.to_string(),
        "--dim", "128", "--seed", seed, "--out", s(out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

/// Calibrated config on a 12 + 12 zoo, plus a separate 4 + 4 zoo.
fn setup(dir: &Path) -> std::path::PathBuf {
    let (c, b) = (dir.join("c"), dir.join("b"));
    synth(&c, 12, 0, "1");
    synth(&b, 0, 12, "2");
    let cfg = dir.join("cfg.json");
    let o = headprobe(&[
        "calibrate", "--clean", s(&c), "--backdoor", s(&b), "--indicator", "mean", "--out", s(&cfg),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    synth(&dir.join("zoo"), 4, 4, "3");
    cfg
}

fn scan_json(zoo: &Path, cfg: &Path) -> Value {
    let o = headprobe(&["--json", "scan", "--zoo", s(zoo), "--config", s(cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn detect_exit_codes_follow_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let zoo = dir.path().join("zoo");
    let manifest: Value = serde_json::from_slice(&std::fs::read(zoo.join("manifest.json")).unwrap()).unwrap();
    let entries = manifest.as_array().or_else(|| manifest["models"].as_array()).unwrap();
    let (mut clean, mut flagged) = (0, 0);
    for e in entries {
        let file = zoo.join(e["file"].as_str().unwrap());
        let o = headprobe(&["--json", "detect", "--model", s(&file), "--config", s(&cfg)]);
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        if e["label"] == "backdoor" {
            assert_eq!(code(&o), 1);
            assert_eq!(v["decision"], "backdoored");
            assert_eq!(v["target"], e["target"]);
            flagged += 1;
        } else {
            assert_eq!(code(&o), 0);
            assert_eq!(v["decision"], "clean");
            clean += 1;
        }
    }
    assert_eq!((clean, flagged), (4, 4));
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 1, 0, "0");
    let o = headprobe(&["detect", "--model", s(&dir.path().join("m0001.json"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unreadable_model_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let o = headprobe(&["detect", "--model", s(&dir.path().join("nope.json")), "--config", s(&cfg)]);
    assert_eq!(code(&o), 3);
}

#[test]
fn empty_zoo_reports_no_rates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let r = scan_json(&empty, &cfg);
    assert_eq!(r["counts"]["models"], 0);
    for k in ["tpr", "tpr_target_match", "fpr", "mtpr", "average_precision"] {
        assert!(r["metrics"][k].is_null(), "{k}");
    }
}

#[test]
fn all_clean_zoo_has_no_tpr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let zoo = dir.path().join("c");
    let r = scan_json(&zoo, &cfg);
    let models = r["models"].as_array().unwrap();
    assert_eq!(models.len(), 12);
    let flagged = models.iter().filter(|m| m["decision"] == "backdoored").count();
    assert!(r["metrics"]["tpr"].is_null());
    assert!(r["metrics"]["average_precision"].is_null());
    assert_eq!(r["metrics"]["fpr"].as_f64().unwrap(), flagged as f64 / 12.0);
}

#[test]
fn corrupt_file_does_not_abort_the_scan() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let zoo = dir.path().join("zoo");
    std::fs::write(zoo.join("zz_broken.json"), b"{\"format_version\": 1, \"layers\": [").unwrap();
    let r = scan_json(&zoo, &cfg);
    assert_eq!(r["counts"]["models"], 9);
    assert_eq!(r["counts"]["errors"], 1);
    let broken = r["models"].as_array().unwrap().iter().find(|m| m["file"] == "zz_broken.json").unwrap();
    assert_eq!(broken["decision"], "error");
    assert_eq!(r["metrics"]["tpr"].as_f64(), Some(1.0));
}

#[test]
fn probe_csv_has_one_row_per_probe() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 1, 0, "0");
    let out = dir.path().join("p.csv");
    let o = headprobe(&["probe", "--model", s(&dir.path().join("m0001.json")), "--count", "7", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 128);
    assert_eq!(rdr.records().count(), 7);
}
