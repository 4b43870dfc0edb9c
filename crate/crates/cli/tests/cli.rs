use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ffpnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ffpnet"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn ffpnet")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ffpnet(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_hyper(dir: &Path) {
    ok(dir, &["--seed", "5", "--out", "hyper", "synth", "--kind", "hyper", "--height", "16", "--width", "16", "--bands", "6", "--classes", "3"]);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = ok(tmp.path(), &["--seed", "9", "--out", "a", "synth", "--kind", "hyper"]);
    ok(tmp.path(), &["--seed", "9", "--out", "b", "synth", "--kind", "hyper"]);
    ok(tmp.path(), &["--seed", "10", "--out", "c", "synth", "--kind", "hyper"]);
    assert!(a.starts_with("# synthetic hypercube"));
    for f in ["bands.ffpt", "labels.ffpt", "classes.txt", "palette.txt", "labels.ppm", "run.json"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(tmp.path().join("a/bands.ffpt")).unwrap(), fs::read(tmp.path().join("c/bands.ffpt")).unwrap());
}

#[test]
fn seg_synth_lists_its_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["--out", "s", "synth", "--kind", "seg", "--height", "24", "--width", "20", "--classes", "3"]);
    let listed: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(listed.len(), 5);
    for f in listed {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    let img = fs::read(tmp.path().join("s/image.ppm")).unwrap();
    assert!(img.starts_with(b"P6"));
    assert_eq!(json(&tmp.path().join("s/run.json"))["task"], "segment");
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    small_hyper(tmp.path());
    fs::write(tmp.path().join("bad.json"), r#"{"task": "classify", "data": {"bands": "hyper/bands.ffpt"}, "epochz": 3}"#).unwrap();
    let out = ffpnet(tmp.path(), &["--config", "bad.json", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn missing_data_field_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.json"), r#"{"task": "classify", "data": {}}"#).unwrap();
    let out = ffpnet(tmp.path(), &["--config", "c.json", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.bands"));
}

#[test]
fn zero_epochs_gives_an_eval_only_report() {
    let tmp = tempfile::tempdir().unwrap();
    small_hyper(tmp.path());
    ok(tmp.path(), &["--config", "hyper/run.json", "--out", "ck", "train", "--epochs", "0"]);
    let report = json(&tmp.path().join("ck/report.json"));
    let records = report["training"]["records"].as_array().unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0]["epoch"], 0);
    assert!(records[0]["loss"].is_null());
    assert_eq!(report["training"]["steps"], 0);
    assert!(report["test_metrics"]["oa"].is_number());
    assert!(tmp.path().join("ck/manifest.txt").is_file());
}

#[test]
fn eval_is_deterministic_and_erosion_shrinks_support() {
    let tmp = tempfile::tempdir().unwrap();
    small_hyper(tmp.path());
    ok(tmp.path(), &["--config", "hyper/run.json", "--out", "ck", "train", "--epochs", "1"]);
    ok(tmp.path(), &["--out", "e1", "eval", "--checkpoint", "ck"]);
    ok(tmp.path(), &["--out", "e2", "eval", "--checkpoint", "ck"]);
    for f in ["confusion.csv", "metrics.json", "confusion.ppm", "classmap.ppm"] {
        assert_eq!(fs::read(tmp.path().join("e1").join(f)).unwrap(), fs::read(tmp.path().join("e2").join(f)).unwrap(), "{f}");
    }
    let support = |dir: &str| -> u64 {
        json(&tmp.path().join(dir).join("metrics.json"))["per_class"].as_array().unwrap().iter().map(|c| c["support"].as_u64().unwrap()).sum()
    };
    let mut last = support("e1");
    for r in 1..=3 {
        let dir = format!("r{r}");
        ok(tmp.path(), &["--out", &dir, "eval", "--checkpoint", "ck", "--erode", &r.to_string()]);
        let s = support(&dir);
        assert!(s <= last, "erode {r}: {s} > {last}");
        last = s;
    }
    assert!(last < support("e1"));
}

#[test]
fn predict_matches_input_extents() {
    let tmp = tempfile::tempdir().unwrap();
    small_hyper(tmp.path());
    ok(tmp.path(), &["--config", "hyper/run.json", "--out", "ck", "train", "--epochs", "0"]);
    ok(tmp.path(), &["--out", "p", "predict", "--checkpoint", "ck", "--input", "hyper/bands.ffpt"]);
    let pred = ffpnet::tensor::ffpt::Array::read(&tmp.path().join("p/prediction.ffpt")).unwrap();
    assert_eq!(pred.shape, vec![16, 16]);
    let labels = pred.to_labels().unwrap();
    assert!(labels.iter().all(|&l| (1..=3).contains(&l)));
    let ppm = fs::read(tmp.path().join("p/classmap.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n16 16\n255\n"));
}

#[test]
fn predict_rejects_wrong_band_count() {
    let tmp = tempfile::tempdir().unwrap();
    small_hyper(tmp.path());
    ok(tmp.path(), &["--seed", "1", "--out", "other", "synth", "--kind", "hyper", "--height", "8", "--width", "8", "--bands", "4"]);
    ok(tmp.path(), &["--config", "hyper/run.json", "--out", "ck", "train", "--epochs", "0"]);
    let out = ffpnet(tmp.path(), &["predict", "--checkpoint", "ck", "--input", "other/bands.ffpt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_single_module() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["gradcheck", "--only", "repyatt"]);
    assert!(out.lines().any(|l| l.contains("repyatt") && l.contains("pass")));
    assert!(out.contains("all 1 checks passed"));
    let bad = ffpnet(tmp.path(), &["gradcheck", "--only", "no_such_check"]);
    assert_eq!(bad.status.code(), Some(2));
}
