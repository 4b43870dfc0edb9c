mod common;

use std::collections::BTreeSet;

use common::*;
use ffpnet::data::{read_ppm, Palette};
use ffpnet::metrics::*;
use ffpnet::Error;
use rand::RngExt;

fn matrix(pairs: &[(i32, i32)], k: usize) -> ConfusionMatrix {
    let (t, p): (Vec<i32>, Vec<i32>) = pairs.iter().copied().unzip();
    let mut cm = ConfusionMatrix::new(k);
    cm.accumulate(&t, &p, None).unwrap();
    cm
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

#[test]
fn hand_case_from_eight_pixels() {
    let truth = [1, 1, 1, 1, 2, 2, 2, 2];
    let pred = [1, 1, 1, 2, 2, 2, 2, 2];
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&truth, &pred, None).unwrap();
    assert_eq!(cm, ConfusionMatrix::from_rows(&[vec![3, 1], vec![0, 4]]).unwrap());
    let o = overall_metrics(&cm).unwrap();
    assert!(close(o.oa, 0.875) && close(o.kappa, 0.75) && close(o.aa, 0.875));
    let p = per_class_metrics(&cm).unwrap();
    assert!(close(p.iou[0], 0.75) && close(p.iou[1], 0.8) && close(p.miou, 0.775));
    assert!(close(p.f1[0], 6.0 / 7.0));
}

#[test]
fn chance_and_perfect_matrices() {
    let uniform = ConfusionMatrix::from_rows(&[vec![1, 1], vec![1, 1]]).unwrap();
    let o = overall_metrics(&uniform).unwrap();
    assert_eq!((o.oa, o.kappa), (0.5, 0.0));
    let diag = ConfusionMatrix::from_rows(&[vec![5, 0, 0], vec![0, 2, 0], vec![0, 0, 9]]).unwrap();
    let o = overall_metrics(&diag).unwrap();
    assert_eq!((o.oa, o.aa, o.kappa), (1.0, 1.0, 1.0));
    let p = per_class_metrics(&diag).unwrap();
    assert!(p.f1.iter().chain(&p.iou).all(|&v| v == 1.0));
    let single = ConfusionMatrix::from_rows(&[vec![4, 0], vec![0, 0]]).unwrap();
    assert_eq!(overall_metrics(&single).unwrap().kappa, 1.0);
}

#[test]
fn absent_class_is_excluded_from_means() {
    let cm = ConfusionMatrix::from_rows(&[vec![3, 0, 1], vec![0, 0, 0], vec![0, 0, 4]]).unwrap();
    let p = per_class_metrics(&cm).unwrap();
    assert_eq!(p.present, vec![true, false, true]);
    assert!(close(p.miou, (0.75 + 0.8) / 2.0));
    assert!(close(overall_metrics(&cm).unwrap().aa, (0.75 + 1.0) / 2.0));
}

#[test]
fn accumulate_contract() {
    let mut cm = ConfusionMatrix::new(3);
    cm.accumulate(&[1, 2, 3], &[3, 2, 1], Some(&[false; 3])).unwrap();
    assert_eq!(cm.total(), 0);
    cm.accumulate(&[1, 2, 3], &[1, 2, 3], None).unwrap();
    assert_eq!(cm.trace(), 3);
    assert_eq!(cm.total(), 3);
    assert!(matches!(cm.accumulate(&[0, 1], &[1, 1], None), Err(Error::Usage(_))));
    assert!(matches!(cm.accumulate(&[1, 1], &[1, 4], None), Err(Error::Usage(_))));
    assert_eq!(cm.total(), 3);
    cm.accumulate(&[0, 1], &[1, 1], Some(&[false, true])).unwrap();
    assert_eq!(cm.get(0, 0), 2);
    assert!(matches!(cm.accumulate(&[1], &[1, 1], None), Err(Error::Usage(_))));
}

#[test]
fn empty_matrix_is_undefined() {
    let cm = ConfusionMatrix::new(3);
    assert!(matches!(overall_metrics(&cm), Err(Error::UndefinedMetric(_))));
    assert!(matches!(per_class_metrics(&cm), Err(Error::UndefinedMetric(_))));
}

#[test]
fn metrics_match_brute_force_on_random_matrices() {
    let mut r = rng(40);
    for case in 0..200 {
        let k = r.random_range(2..=7);
        let pairs = random_pairs(&mut r, k);
        let cm = matrix(&pairs, k as usize);
        assert_eq!(cm.total(), pairs.len() as u64);
        let b = brute(&pairs, k);
        let o = overall_metrics(&cm).unwrap();
        let p = per_class_metrics(&cm).unwrap();
        assert!(close(o.oa, b.oa) && close(o.aa, b.aa) && close(o.kappa, b.kappa), "case {case}");
        assert!(close(p.mean_f1, b.mean_f1) && close(p.miou, b.miou), "case {case}");
        for c in 0..k as usize {
            assert!(close(p.f1[c], b.f1[c]) && close(p.iou[c], b.iou[c]), "case {case} class {c}");
        }
        for v in [o.oa, o.aa, p.mean_f1, p.miou].iter().chain(&p.f1).chain(&p.iou) {
            assert!((0.0..=1.0).contains(v));
        }
        assert!((-1.0..=1.0).contains(&o.kappa));
        let diagonal = (0..k as usize).all(|t| (0..k as usize).all(|q| t == q || cm.get(t, q) == 0));
        assert_eq!(o.kappa == 1.0, diagonal, "case {case}");
    }
}

#[test]
fn class_permutation_invariance() {
    let mut r = rng(41);
    for _ in 0..50 {
        let k = r.random_range(2..=6);
        let pairs = random_pairs(&mut r, k);
        let mut perm: Vec<i32> = (1..=k).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let permuted: Vec<(i32, i32)> = pairs.iter().map(|&(t, p)| (perm[t as usize - 1], perm[p as usize - 1])).collect();
        let (a, b) = (matrix(&pairs, k as usize), matrix(&permuted, k as usize));
        let (oa, ob) = (overall_metrics(&a).unwrap(), overall_metrics(&b).unwrap());
        let (pa, pb) = (per_class_metrics(&a).unwrap(), per_class_metrics(&b).unwrap());
        assert!(close(oa.oa, ob.oa) && close(oa.aa, ob.aa) && close(oa.kappa, ob.kappa));
        assert!(close(pa.mean_f1, pb.mean_f1) && close(pa.miou, pb.miou));
        for c in 0..k as usize {
            let c2 = perm[c] as usize - 1;
            assert!(close(pa.f1[c], pb.f1[c2]) && close(pa.iou[c], pb.iou[c2]));
        }
    }
}

#[test]
fn accumulation_is_order_independent() {
    let mut r = rng(42);
    let a = random_pairs(&mut r, 4);
    let b = random_pairs(&mut r, 4);
    let (ma, mb) = (matrix(&a, 4), matrix(&b, 4));
    let mut ab = ma.clone();
    ab.merge(&mb).unwrap();
    let mut ba = mb.clone();
    ba.merge(&ma).unwrap();
    let all: Vec<_> = b.iter().chain(&a).copied().collect();
    assert_eq!(ab, ba);
    assert_eq!(ab, matrix(&all, 4));
    assert!(ab.merge(&ConfusionMatrix::new(3)).is_err());
}

#[test]
fn erosion_examples() {
    let mut r = rng(43);
    let labels: Vec<i32> = (0..30).map(|_| r.random_range(0..4)).collect();
    let mask = erode_boundary_mask(&labels, 5, 6, 0).unwrap();
    assert_eq!(mask, labels.iter().map(|&l| l != 0).collect::<Vec<_>>());
    for radius in [1, 3, 10] {
        assert!(erode_boundary_mask(&[2; 20], 4, 5, radius).unwrap().iter().all(|&v| v));
    }
    let half: Vec<i32> = (0..25).map(|i| if i % 5 < 3 { 1 } else { 2 }).collect();
    let mask = erode_boundary_mask(&half, 5, 5, 1).unwrap();
    assert_eq!(mask, brute_force_near_boundary(&half, 5, 5, 1).iter().map(|&b| !b).collect::<Vec<_>>());
    for i in 0..25 {
        assert_eq!(mask[i], !(i % 5 == 2 || i % 5 == 3));
    }
}

#[test]
fn erosion_matches_brute_force() {
    for seed in 0..50 {
        let mut r = rng(100 + seed);
        let k = r.random_range(1..=4);
        let coarse: Vec<i32> = (0..16).map(|_| r.random_range(0..=k)).collect();
        let labels: Vec<i32> = (0..144).map(|i| coarse[(i / 12 / 3) * 4 + (i % 12) / 3]).collect();
        for radius in 0..4 {
            let mask = erode_boundary_mask(&labels, 12, 12, radius).unwrap();
            let oracle = brute_force_near_boundary(&labels, 12, 12, radius);
            let expected: Vec<bool> = labels.iter().zip(&oracle).map(|(&l, &b)| l != 0 && !b).collect();
            assert_eq!(mask, expected, "seed {seed} r {radius}");
        }
    }
}

#[test]
fn erosion_is_monotone_in_radius() {
    let labels: Vec<i32> = (0..100).map(|i| 1 + ((i % 10) / 4 + (i / 10) / 5) as i32).collect();
    let valid: Vec<usize> =
        (0..5).map(|r| erode_boundary_mask(&labels, 10, 10, r).unwrap().iter().filter(|&&v| v).count()).collect();
    assert!(valid.windows(2).all(|w| w[1] <= w[0]), "{valid:?}");
    assert!(valid[0] > valid[3]);
}

#[test]
fn reports_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cm = ConfusionMatrix::from_rows(&[vec![3, 1, 0], vec![0, 4, 2], vec![0, 0, 0]]).unwrap();
    let names: Vec<String> = ["road", "tree, tall", "car"].iter().map(|s| s.to_string()).collect();
    let report = MetricsReport::from_matrix(&cm, &names).unwrap();
    let labels = vec![1, 2, 3, 1, 2, 3];
    let palette = Palette::generated(3);
    let files = emit_reports(&cm, &report, &names, Some((&labels, 2, 3, &palette)), dir.path()).unwrap();
    assert_eq!(files.len(), 4);

    let csv = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let (parsed_names, parsed) = ConfusionMatrix::from_csv(&csv).unwrap();
    assert_eq!((parsed_names, parsed), (names.clone(), cm.clone()));

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    let keys: BTreeSet<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, BTreeSet::from(["oa", "aa", "kappa", "mean_f1", "miou", "per_class"]));
    assert_eq!(json["per_class"].as_array().unwrap().len(), 3);
    let parsed: MetricsReport = serde_json::from_value(json).unwrap();
    assert_eq!(parsed, report);

    let (w, h, rgb) = read_ppm(&dir.path().join("confusion.ppm")).unwrap();
    assert_eq!((w, h), (3 * HEAT_MAP_CELL, 3 * HEAT_MAP_CELL));
    for t in 0..3 {
        let y = t * HEAT_MAP_CELL + HEAT_MAP_CELL / 2;
        let row: Vec<u8> = (0..3).map(|p| rgb[(y * w + p * HEAT_MAP_CELL + 1) * 3]).collect();
        let counts: Vec<u64> = (0..3).map(|p| cm.get(t, p)).collect();
        let max = *counts.iter().max().unwrap();
        if max == 0 {
            assert_eq!(row, vec![0, 0, 0]);
        } else {
            assert_eq!(*row.iter().max().unwrap(), 255);
            for p in 0..3 {
                assert_eq!(row[p], (255.0 * counts[p] as f64 / max as f64).round() as u8);
            }
        }
    }

    let (w, h, rgb) = read_ppm(&dir.path().join("classmap.ppm")).unwrap();
    assert_eq!((w, h), (3, 2));
    assert_eq!(rgb, palette.render(&labels));
}
