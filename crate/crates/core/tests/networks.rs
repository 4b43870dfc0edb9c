mod common;

use common::*;
use ffpnet::attn::RegionPyramidConfig;
use ffpnet::autograd::{grad_check_with, GradCheckOptions, Tape};
use ffpnet::networks::*;
use ffpnet::nn::{Ctx, ParamStore};
use ffpnet::rng::from_u64;
use ffpnet::{Error, Tensor};

fn eval_forward(store: &ParamStore, f: impl for<'t> Fn(&Ctx<'t>) -> ffpnet::Result<ffpnet::autograd::Var<'t>>) -> ffpnet::Result<Tensor> {
    let tape = Tape::new();
    let cx = Ctx::eval(&tape, store);
    Ok((*f(&cx)?.value()).clone())
}

fn tiny_classifier(bands: usize, d: usize) -> NetworkConfig {
    let mut cfg = NetworkConfig::classifier(bands, 3, d, false);
    cfg.backbone.stage_widths = vec![2, 3, 3, 4, 4];
    cfg.backbone.stage_block_counts = vec![1, 1, 1, 1, 1];
    cfg.fusion_width = 2;
    cfg.feature_width = 4;
    cfg.fc_width = 4;
    cfg.spectral_widths = [4, 3, 2];
    cfg
}

fn tiny_segmenter() -> NetworkConfig {
    let mut cfg = NetworkConfig::segmenter(2, false);
    cfg.backbone.stem_width = 2;
    cfg.backbone.stage_widths = vec![4, 4, 4, 4];
    cfg.fusion_width = 2;
    cfg
}

#[test]
fn residual_taps_follow_stride_schedule() {
    let mut store = ParamStore::new();
    let bb = ResidualBackbone::new(&mut store, "bb", &BackboneConfig::residual(3, false), &mut rng(1)).unwrap();
    let x = randn_like(&[1, 3, 64, 64], &mut rng(2));
    let tape = Tape::new();
    let cx = Ctx::eval(&tape, &store);
    let taps = bb.forward(&cx, cx.input(x)).unwrap();
    let got: Vec<(usize, usize)> = taps.iter().map(|t| (t.shape()[1], 64 / t.shape()[2])).collect();
    assert_eq!(got, vec![(16, 2), (64, 4), (128, 8), (256, 16), (512, 16)]);
}

#[test]
fn vgg_taps_and_pool_skipping() {
    assert_eq!(VggBackbone::tap_extents(9), [4, 2, 1]);
    assert_eq!(VggBackbone::tap_extents(29), [14, 7, 3]);
    assert_eq!(VggBackbone::tap_extents(5), [2, 1, 1]);
    let mut store = ParamStore::new();
    let bb = VggBackbone::new(&mut store, "bb", &BackboneConfig::vgg(3, true), &mut rng(3)).unwrap();
    assert_eq!(bb.tap_channels, vec![128, 512, 512]);
    let mut store = ParamStore::new();
    let cfg = tiny_classifier(3, 5).backbone;
    let bb = VggBackbone::new(&mut store, "bb", &cfg, &mut rng(4)).unwrap();
    let x = randn_like(&[2, 3, 5, 5], &mut rng(5));
    let taps = eval_forward(&store, |cx| Ok(bb.forward(cx, cx.input(x.clone()))?[2])).unwrap();
    assert_eq!(taps.shape(), &[2, 4, 1, 1]);
}

#[test]
fn backbone_config_validation() {
    let mut cfg = BackboneConfig::residual(3, false);
    cfg.stage_widths.pop();
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = BackboneConfig::vgg(3, false);
    cfg.stage_block_counts[2] = 0;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = NetworkConfig::classifier(8, 4, 8, false);
    assert!(matches!(cfg.validate_classifier(), Err(Error::Config(_))));
    cfg.patch_size = 9;
    cfg.num_classes = 1;
    assert!(matches!(cfg.validate_classifier(), Err(Error::Config(_))));
    let json = serde_json::to_string(&NetworkConfig::segmenter(6, false)).unwrap();
    let back: NetworkConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, NetworkConfig::segmenter(6, false));
    assert!(serde_json::from_str::<NetworkConfig>(&json.replacen("fusion_width", "fusion_wdth", 1)).is_err());
}

#[test]
fn heavy_output_matches_input_extent() {
    let mut store = ParamStore::new();
    let cfg = NetworkConfig::segmenter(5, false);
    let net = HeavyFfpNet::new(&mut store, &cfg, &mut rng(6)).unwrap();
    let x = randn_like(&[1, 3, 64, 80], &mut rng(7));
    let a = eval_forward(&store, |cx| net.forward(cx, cx.input(x.clone()))).unwrap();
    assert_eq!(a.shape(), &[1, 5, 64, 80]);
    assert!(a.all_finite());
    let b = eval_forward(&store, |cx| net.forward(cx, cx.input(x.clone()))).unwrap();
    assert_eq!(a.data(), b.data());
    let bad = randn_like(&[1, 3, 40, 64], &mut rng(8));
    let err = eval_forward(&store, |cx| net.forward(cx, cx.input(bad.clone()))).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn heavy_without_aspp_and_with_other_pyramids() {
    for cfg_pyr in RegionPyramidConfig::ablation_set() {
        let mut cfg = tiny_segmenter();
        cfg.region_pyramid = cfg_pyr;
        cfg.aspp = None;
        let mut store = ParamStore::new();
        let net = HeavyFfpNet::new(&mut store, &cfg, &mut rng(9)).unwrap();
        assert!(store.ids_with_prefix("x5").next().is_none());
        let x = randn_like(&[1, 3, 64, 64], &mut rng(10));
        let y = eval_forward(&store, |cx| net.forward(cx, cx.input(x.clone()))).unwrap();
        assert_eq!(y.shape(), &[1, 2, 64, 64]);
    }
}

#[test]
fn classifier_shapes_and_eval_determinism() {
    let mut store = ParamStore::new();
    let cfg = NetworkConfig::classifier(8, 4, 9, false);
    let net = SpatialSpectralNet::new(&mut store, &cfg, &mut rng(11)).unwrap();
    let x = randn_like(&[3, 8, 9, 9], &mut rng(12));
    let a = eval_forward(&store, |cx| net.forward(cx, cx.input(x.clone()))).unwrap();
    assert_eq!(a.shape(), &[3, 4]);
    let b = eval_forward(&store, |cx| net.forward(cx, cx.input(x.clone()))).unwrap();
    assert_eq!(a.data(), b.data());
    let shifted = a.map(|v| v + 17.25);
    assert_eq!(a.argmax_axis1(), shifted.argmax_axis1());
    let wrong = randn_like(&[1, 8, 7, 7], &mut rng(13));
    assert!(matches!(eval_forward(&store, |cx| net.forward(cx, cx.input(wrong.clone()))), Err(Error::Config(_))));
}

#[test]
fn light_spatial_accepts_two_hundred_band_patches() {
    let mut store = ParamStore::new();
    let cfg = NetworkConfig::classifier(200, 16, 9, false);
    let m = LightSpatialFfp::new(&mut store, "spatial", &cfg, &mut rng(14)).unwrap();
    let x = randn_like(&[1, 200, 9, 9], &mut rng(15));
    let v = eval_forward(&store, |cx| m.forward(cx, cx.input(x.clone()))).unwrap();
    assert_eq!(v.shape(), &[1, 256]);
    assert!(v.all_finite());
}

#[test]
fn spectral_constant_cube_is_finite_in_training_mode() {
    let mut store = ParamStore::new();
    let cfg = NetworkConfig::classifier(8, 4, 7, false);
    let m = SpectralFfp::new(&mut store, "spectral", &cfg, &mut rng(16)).unwrap();
    let x = Tensor::full(&[2, 8, 7, 7], 0.3);
    let tape = Tape::new();
    let cx = Ctx::new(&tape, &store, true, from_u64(1));
    let v = m.forward(&cx, cx.input(x)).unwrap();
    assert_eq!(v.shape(), vec![2, 256]);
    assert!(v.value().all_finite());
    assert_eq!(store.ids_with_prefix("spectral.x2.conv3.conv.weight").map(|i| store.get(i).shape().to_vec()).next(), Some(vec![32, 64, 3, 3]));
}

#[test]
fn channel_replication() {
    let k = randn_like(&[4, 3, 3, 3], &mut rng(17));
    assert_eq!(init_channel_replicate(&k, 3).unwrap(), k);
    let six = init_channel_replicate(&k, 6).unwrap();
    let wide = init_channel_replicate(&k, 200).unwrap();
    assert_eq!(wide.shape(), &[4, 200, 3, 3]);
    let slice = |t: &Tensor, o: usize, c: usize| {
        let cin = t.shape()[1];
        t.data()[(o * cin + c) * 9..(o * cin + c + 1) * 9].to_vec()
    };
    for o in 0..4 {
        for c in 0..3 {
            assert_eq!(slice(&six, o, c), slice(&six, o, c + 3));
        }
        for c in 0..200 {
            let (a, b) = (slice(&wide, o, c), slice(&k, o, c % 3));
            assert_eq!(a, b);
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_eq!(norm(&a), norm(&b));
        }
    }
    assert!(init_channel_replicate(&randn_like(&[2, 4, 3, 3], &mut rng(18)), 6).is_err());
}

#[test]
fn import_replicates_first_layer() {
    let dir = tempfile::tempdir().unwrap();
    let mut src = ParamStore::new();
    let k3 = randn_like(&[2, 3, 3, 3], &mut rng(19));
    src.add("spatial.backbone.block1.conv0.conv.weight", k3.clone());
    src.save(dir.path()).unwrap();
    let mut store = ParamStore::new();
    SpatialSpectralNet::new(&mut store, &tiny_classifier(7, 5), &mut rng(20)).unwrap();
    assert_eq!(import_weights(&mut store, dir.path()).unwrap(), 1);
    assert_eq!(param(&store, "spatial.backbone.block1.conv0.conv.weight"), &init_channel_replicate(&k3, 7).unwrap());

    let mut other = ParamStore::new();
    other.add("not.a.param", Tensor::zeros(&[1]));
    let dir2 = tempfile::tempdir().unwrap();
    other.save(dir2.path()).unwrap();
    assert!(matches!(import_weights(&mut store, dir2.path()), Err(Error::Validation(_))));
}

fn net_opts() -> GradCheckOptions {
    GradCheckOptions { rel_step: 1e-6, max_coords_per_tensor: Some(6), seed: 3 }
}

#[test]
fn classifier_gradchecks_end_to_end() {
    let cfg = tiny_classifier(3, 5);
    let mut store = ParamStore::new();
    let net = SpatialSpectralNet::new(&mut store, &cfg, &mut rng(21)).unwrap();
    jitter_biases(&mut store, 21);
    let x = randn_like(&[3, 3, 5, 5], &mut rng(22));
    let rep = grad_check_with(
        |tape, st, xs| {
            let cx = Ctx::new(tape, st, true, from_u64(5));
            project(net.forward(&cx, xs[0])?, 23)
        },
        &[x],
        &store,
        &net_opts(),
    )
    .unwrap();
    assert!(rep.max_rel_error <= 1e-4, "{rep:?}");
}

#[test]
fn segmenter_gradchecks_end_to_end() {
    let cfg = tiny_segmenter();
    let mut store = ParamStore::new();
    let net = HeavyFfpNet::new(&mut store, &cfg, &mut rng(24)).unwrap();
    jitter_biases(&mut store, 24);
    let x = randn_like(&[1, 3, 32, 32], &mut rng(25));
    let rep = grad_check_with(
        |tape, st, xs| project(net.forward(&Ctx::new(tape, st, true, from_u64(0)), xs[0])?, 26),
        &[x],
        &store,
        &net_opts(),
    )
    .unwrap();
    assert!(rep.max_rel_error <= 1e-4, "{rep:?}");
}
