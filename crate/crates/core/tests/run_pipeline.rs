//! Train, evaluate and predict through checkpoints on small synthetic data.

use std::fs;
use std::path::Path;

use ffpnet::data::{generate_hyper, synth_hyper, synth_seg, SynthHyperParams, SynthSegParams};
use ffpnet::metrics::erode_boundary_mask;
use ffpnet::run::{self, EvalOptions, RunConfig, Split};
use ffpnet::tensor::ffpt::Array;
use ffpnet::Error;
use serde_json::{json, Value};

fn small_hyper(noise: f64) -> SynthHyperParams {
    SynthHyperParams { height: 16, width: 16, bands: 6, classes: 3, noise }
}

fn hyper_config(dir: &Path, params: &SynthHyperParams, extra: Value) -> RunConfig {
    synth_hyper(params, 2, dir).unwrap();
    let mut cfg = json!({
        "task": "classify",
        "data": {"bands": "bands.ffpt", "labels": "labels.ffpt", "classes": "classes.txt", "palette": "palette.txt"},
        "out": "ck",
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("run.json");
    fs::write(&path, cfg.to_string()).unwrap();
    RunConfig::load(&path).unwrap()
}

#[test]
fn memorized_toy_scores_perfectly_on_its_training_split() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = hyper_config(dir.path(), &small_hyper(0.02), json!({"patch_size": 5, "epochs": 15, "augment": false}));
    let outcome = run::train(cfg).unwrap();
    let ck = outcome.checkpoint;
    let opts = EvalOptions { split: Split::Train, labeled_only: true, ..Default::default() };
    let eval = run::evaluate(&ck, &opts).unwrap();
    let train: u64 = outcome.report["dataset"]["train_per_class"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(eval.evaluated, train);
    assert_eq!(eval.metrics.oa, 1.0);
    assert_eq!(eval.metrics.kappa, 1.0);
    for f in ["confusion.csv", "metrics.json", "confusion.ppm", "classmap.ppm"] {
        assert!(ck.join("eval").join(f).is_file(), "{f}");
    }
}

#[test]
fn noiseless_prediction_matches_voronoi_map_off_the_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let params = small_hyper(0.0);
    let cfg = hyper_config(dir.path(), &params, json!({"patch_size": 5, "epochs": 15}));
    let ck = run::train(cfg).unwrap().checkpoint;
    let out = dir.path().join("pred");
    run::predict(&ck, &dir.path().join("bands.ffpt"), &out).unwrap();
    let pred = Array::read(&out.join("prediction.ffpt")).unwrap().to_labels().unwrap();
    let (cube, _) = generate_hyper(&params, 2).unwrap();
    assert_eq!(pred.len(), cube.labels.len());
    let interior = erode_boundary_mask(&cube.labels, 16, 16, 2).unwrap();
    let mut checked = 0;
    for ((&p, &t), &inside) in pred.iter().zip(&cube.labels).zip(&interior) {
        if inside {
            assert_eq!(p, t);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn report_echo_reparses_to_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = hyper_config(dir.path(), &small_hyper(0.1), json!({"epochs": 0}));
    let outcome = run::train(cfg).unwrap();
    let echoed: RunConfig = serde_json::from_value(outcome.report["config"].clone()).unwrap();
    let (loaded, store, _) = run::load_checkpoint(&outcome.checkpoint).unwrap();
    assert_eq!(loaded, echoed);
    assert_eq!(echoed.epochs, Some(0));
    assert_eq!(echoed.threshold, Some(200));
    assert_eq!(outcome.report["trainable_parameters"].as_u64().unwrap() as usize, store.num_trainable());
}

#[test]
fn tampered_checkpoint_names_the_mismatched_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = hyper_config(dir.path(), &small_hyper(0.1), json!({"epochs": 0}));
    let ck = run::train(cfg).unwrap().checkpoint;
    let path = ck.join("report.json");
    let mut report: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    report["config"]["network"]["fc_width"] = json!(128);
    fs::write(&path, report.to_string()).unwrap();
    let err = run::evaluate(&ck, &EvalOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
    assert!(err.to_string().contains("merge.hidden.weight"), "{err}");
}

#[test]
fn classify_requires_class_names() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = hyper_config(dir.path(), &small_hyper(0.1), json!({"epochs": 0, "data": {"bands": "bands.ffpt", "labels": "labels.ffpt"}}));
    let err = run::train(cfg).unwrap_err();
    assert!(err.to_string().contains("data.classes"), "{err}");
}

#[test]
fn segment_prediction_keeps_input_extents() {
    let dir = tempfile::tempdir().unwrap();
    let params = SynthSegParams { height: 48, width: 32, classes: 3, ..Default::default() };
    synth_seg(&params, 5, dir.path()).unwrap();
    let cfg = json!({
        "task": "segment",
        "data": {"images": [{"image": "image.ppm", "labels": "labels.ppm"}], "palette": "palette.txt", "classes": "classes.txt"},
        "epochs": 2,
        "batch_size": 1,
        "out": "ck",
    });
    fs::write(dir.path().join("run.json"), cfg.to_string()).unwrap();
    let outcome = run::train(RunConfig::load(&dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(outcome.report["training"]["steps"], 2);
    let out = dir.path().join("pred");
    run::predict(&outcome.checkpoint, &dir.path().join("image.ppm"), &out).unwrap();
    let pred = Array::read(&out.join("prediction.ffpt")).unwrap();
    assert_eq!(pred.shape, vec![48, 32]);
    let eval = run::evaluate(&outcome.checkpoint, &EvalOptions { erode: Some(0), ..Default::default() }).unwrap();
    assert_eq!(eval.evaluated, 48 * 32);
    let eroded = run::evaluate(&outcome.checkpoint, &EvalOptions { erode: Some(3), ..Default::default() }).unwrap();
    assert!(eroded.evaluated < eval.evaluated);

    let odd = dir.path().join("odd.ppm");
    ffpnet::data::write_ppm(&odd, 36, 40, &vec![128; 36 * 40 * 3]).unwrap();
    let err = run::predict(&outcome.checkpoint, &odd, &out).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}
