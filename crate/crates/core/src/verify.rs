//! The finite-difference gradient suite behind the `gradcheck` command.

use std::rc::Rc;

use rand::RngExt;

use crate::attn::{AdaptiveAspp, Aggregation, AsppConfig, AttFuse, CrsAtt, MuAttFusion, RePyAtt, RegionGroup, RegionPyramidConfig, RegionSelfAttention, ResConv, SameLayerMode};
use crate::autograd::{concat, grad_check_with, GradCheckOptions, GradCheckReport, Tape, Var};
use crate::error::{Error, Result};
use crate::networks::{HeavyFfpNet, NetworkConfig, SpatialSpectralNet};
use crate::nn::{Ctx, ParamStore};
use crate::rng::{self, Rng, Stream};
use crate::tensor::kernels::{ConvGeometry, ResizeMode};
use crate::tensor::Tensor;
use crate::training::{loss, LossConfig, LossKind};

pub const OP_TOLERANCE: f64 = 1e-5;
pub const NETWORK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Op,
    Module,
    Network,
}

impl CheckKind {
    pub fn label(self) -> &'static str {
        match self {
            CheckKind::Op => "op",
            CheckKind::Module => "module",
            CheckKind::Network => "network",
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            CheckKind::Network => NETWORK_TOLERANCE,
            _ => OP_TOLERANCE,
        }
    }
}

type CheckFn = fn(u64) -> Result<GradCheckReport>;

pub struct Check {
    pub name: &'static str,
    pub kind: CheckKind,
    run: CheckFn,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub kind: CheckKind,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub worst: String,
    pub coords_checked: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

fn opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions { rel_step: 1e-6, max_coords_per_tensor: None, seed }
}

fn net_opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions { rel_step: 1e-6, max_coords_per_tensor: Some(6), seed }
}

fn input_rng(seed: u64, salt: u64) -> Rng {
    rng::substream(seed, Stream::Check, salt)
}

fn rand_tensor(shape: &[usize], r: &mut Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, r)
}

/// `Σ w ⊙ v` with fixed pseudo-random weights, reducing any output to a
/// scalar without symmetric cancellation.
fn project<'t>(v: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let mut r = input_rng(seed, 0xface);
    let w = rand_tensor(&v.shape(), &mut r);
    Ok(v.mul(v.tape().constant(w))?.sum())
}

fn check_op(seed: u64, salt: u64, shape: &[usize], f: impl for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>) -> Result<GradCheckReport> {
    let x = rand_tensor(shape, &mut input_rng(seed, salt));
    grad_check_with(|tape, _, xs| project(f(tape, xs[0])?, seed ^ salt), &[x], &ParamStore::new(), &opts(seed))
}

fn train_cx<'t>(tape: &'t Tape, store: &'t ParamStore) -> Ctx<'t> {
    Ctx::new(tape, store, true, rng::from_u64(0))
}

/// Random biases and BN shifts keep activations off ReLU kinks.
fn jitter_biases(store: &mut ParamStore, r: &mut Rng) {
    for id in store.trainable_ids().collect::<Vec<_>>() {
        let name = store.name(id);
        if name.ends_with(".bias") || name.ends_with(".beta") {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::uniform(&shape, -0.5, 0.5, r);
        }
    }
}

fn worst(reports: impl IntoIterator<Item = Result<GradCheckReport>>) -> Result<GradCheckReport> {
    let mut out = GradCheckReport { max_rel_error: 0.0, worst: String::new(), coords_checked: 0 };
    for rep in reports {
        let rep = rep?;
        out.coords_checked += rep.coords_checked;
        if rep.max_rel_error >= out.max_rel_error {
            out.max_rel_error = rep.max_rel_error;
            out.worst = rep.worst;
        }
    }
    Ok(out)
}

fn op_conv2d(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 1);
    let k = rand_tensor(&[3, 2, 3, 3], &mut r);
    let b = rand_tensor(&[3], &mut r);
    let x = rand_tensor(&[2, 2, 6, 7], &mut r);
    worst([(1, 1, 1), (2, 2, 2), (1, 3, 3), (2, 0, 1)].map(|(stride, pad, dil)| {
        grad_check_with(
            |_, _, xs| project(xs[0].conv2d(xs[1], Some(xs[2]), ConvGeometry::new(stride, pad, dil))?, seed),
            &[x.clone(), k.clone(), b.clone()],
            &ParamStore::new(),
            &opts(seed),
        )
    }))
}

fn op_linear(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 2);
    let x = rand_tensor(&[3, 5], &mut r);
    let w = rand_tensor(&[4, 5], &mut r);
    let b = rand_tensor(&[4], &mut r);
    grad_check_with(|_, _, xs| project(xs[0].linear(xs[1], Some(xs[2]))?, seed), &[x, w, b], &ParamStore::new(), &opts(seed))
}

fn op_relu(seed: u64) -> Result<GradCheckReport> {
    check_op(seed, 3, &[2, 3, 4, 4], |_, x| Ok(x.relu()))
}

fn op_sigmoid(seed: u64) -> Result<GradCheckReport> {
    check_op(seed, 4, &[2, 3, 4, 4], |_, x| Ok(x.scale(3.0).sigmoid()))
}

fn op_softmax(seed: u64) -> Result<GradCheckReport> {
    worst([1, 3].map(|axis| check_op(seed, 5, &[2, 3, 4, 5], move |_, x| x.scale(2.0).softmax(axis))))
}

fn op_log_softmax(seed: u64) -> Result<GradCheckReport> {
    worst([1, 2].map(|axis| check_op(seed, 6, &[2, 3, 4, 5], move |_, x| x.scale(2.0).log_softmax(axis))))
}

fn op_maxpool(seed: u64) -> Result<GradCheckReport> {
    worst([(2, 2), (3, 1), (2, 1)].map(|(k, s)| check_op(seed, 7, &[2, 2, 7, 6], move |_, x| x.maxpool2d(k, s))))
}

fn op_gap(seed: u64) -> Result<GradCheckReport> {
    check_op(seed, 8, &[2, 3, 5, 4], |_, x| x.global_avg_pool())
}

fn op_resize(mode: ResizeMode, seed: u64, salt: u64) -> Result<GradCheckReport> {
    worst([(9, 11), (3, 2), (5, 4), (1, 1)].map(|(h, w)| check_op(seed, salt, &[1, 2, 5, 4], move |_, x| x.resize(h, w, mode))))
}

fn op_bilinear(seed: u64) -> Result<GradCheckReport> {
    op_resize(ResizeMode::Bilinear, seed, 9)
}

fn op_nearest(seed: u64) -> Result<GradCheckReport> {
    op_resize(ResizeMode::Nearest, seed, 10)
}

fn op_region_pool(seed: u64) -> Result<GradCheckReport> {
    worst([1, 2, 3, 5].map(|g| check_op(seed, 11, &[2, 2, 7, 5], move |_, x| x.region_pool(g))))
}

fn op_region_broadcast(seed: u64) -> Result<GradCheckReport> {
    worst([(2, 7, 5), (3, 6, 9)].map(|(g, h, w)| check_op(seed, 12, &[1, 2, g * g], move |_, x| x.region_broadcast(h, w))))
}

fn op_concat_narrow(seed: u64) -> Result<GradCheckReport> {
    check_op(seed, 13, &[2, 3, 3, 4], |_, x| concat(&[x, x.scale(2.0).add_scalar(1.0)], 1)?.narrow(1, 2, 3))
}

fn op_mul_broadcast(seed: u64) -> Result<GradCheckReport> {
    check_op(seed, 14, &[2, 3, 3, 4], |_, x| {
        let gate = x.narrow(1, 0, 1)?.sigmoid();
        x.mul(gate)?.add(x.sub(x.scale(0.5))?)
    })
}

fn op_batch_norm(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 15);
    let x = rand_tensor(&[3, 2, 3, 4], &mut r);
    let g = rand_tensor(&[2], &mut r).map(|v| v + 1.5);
    let b = rand_tensor(&[2], &mut r);
    grad_check_with(|_, _, xs| project(xs[0].batch_norm_train(xs[1], xs[2], None)?, seed), &[x, g, b], &ParamStore::new(), &opts(seed))
}

fn op_batch_norm_eval(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 16);
    let x = rand_tensor(&[2, 2, 3, 4], &mut r);
    let g = rand_tensor(&[2], &mut r);
    let b = rand_tensor(&[2], &mut r);
    let (mean, var) = (rand_tensor(&[2], &mut r), rand_tensor(&[2], &mut r).map(|v| v.abs() + 0.2));
    grad_check_with(
        |_, _, xs| project(xs[0].batch_norm_eval(xs[1], xs[2], &mean, &var)?, seed),
        &[x, g, b],
        &ParamStore::new(),
        &opts(seed),
    )
}

fn op_dropout(seed: u64) -> Result<GradCheckReport> {
    check_op(seed, 17, &[2, 8], move |_, x| x.dropout(0.5, true, &mut rng::from_u64(seed)))
}

fn op_loss(kind: LossKind, seed: u64, salt: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, salt);
    let (n, k, h, w) = (2, 3, 5, 5);
    let labels: Rc<Vec<i32>> = Rc::new((0..n * h * w).map(|_| r.random_range(0..=k as i32)).collect());
    let cfg = LossConfig { kind, ba_boundary_radius: 1, ba_weight: 3.0, ..LossConfig::default() };
    check_op(seed, salt, &[n, k, h, w], move |_, x| loss(x.scale(2.0), &labels, &cfg))
}

fn op_cross_entropy(seed: u64) -> Result<GradCheckReport> {
    op_loss(LossKind::Ce, seed, 18)
}

fn op_ba_loss(seed: u64) -> Result<GradCheckReport> {
    op_loss(LossKind::Ba, seed, 19)
}

fn module_resconv(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 20);
    let mut store = ParamStore::new();
    let m = ResConv::new(&mut store, "rc", 3, 3, &mut r);
    let x = rand_tensor(&[2, 3, 5, 6], &mut r);
    grad_check_with(|t, st, xs| project(m.forward(&train_cx(t, st), xs[0])?, seed), &[x], &store, &opts(seed))
}

fn module_region_attention(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 21);
    let mut store = ParamStore::new();
    let m = RegionSelfAttention::new(&mut store, "att", 4, &mut r);
    let x = rand_tensor(&[2, 4, 6], &mut r);
    grad_check_with(|t, st, xs| project(m.forward(&train_cx(t, st), xs[0])?, seed), &[x], &store, &opts(seed))
}

fn module_repyatt(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 22);
    let reports: Vec<_> = RegionPyramidConfig::ablation_set()
        .into_iter()
        .map(|cfg| {
            let side = if cfg.groups.contains(&RegionGroup::Grid(8)) { 8 } else { 5 };
            let mut store = ParamStore::new();
            let m = RePyAtt::new(&mut store, "rp", 2, &cfg, &mut r)?;
            let x = rand_tensor(&[1, 2, side, side + 1], &mut r);
            grad_check_with(|t, st, xs| project(m.forward(&train_cx(t, st), xs[0])?, seed), &[x], &store, &opts(seed))
        })
        .collect();
    worst(reports)
}

fn module_dam(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 23);
    let mut store = ParamStore::new();
    let m = Aggregation::new(&mut store, "dam", &[2, 3], 3, &mut r);
    let a = rand_tensor(&[2, 2, 8, 8], &mut r);
    let b = rand_tensor(&[2, 3, 6, 6], &mut r);
    grad_check_with(|t, st, xs| project(m.forward(&train_cx(t, st), xs, 2, 4, 4)?, seed), &[a, b], &store, &opts(seed))
}

fn module_uam(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 24);
    let mut store = ParamStore::new();
    let m = Aggregation::new(&mut store, "uam", &[2, 3], 3, &mut r);
    let a = rand_tensor(&[2, 2, 2, 2], &mut r);
    let b = rand_tensor(&[2, 3, 3, 3], &mut r);
    grad_check_with(|t, st, xs| project(m.forward(&train_cx(t, st), xs, 2, 5, 6)?, seed), &[a, b], &store, &opts(seed))
}

fn module_attfuse(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 25);
    let mut store = ParamStore::new();
    let m = AttFuse::new(&mut store, "af", 3, &mut r);
    let a = rand_tensor(&[2, 3, 4, 5], &mut r);
    let b = rand_tensor(&[2, 3, 4, 5], &mut r);
    grad_check_with(|t, st, xs| project(m.forward(&train_cx(t, st), xs[0], xs[1])?, seed), &[a, b], &store, &opts(seed))
}

fn module_muattfusion(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 26);
    let reports: Vec<_> = [SameLayerMode::Repyatt, SameLayerMode::Direct]
        .into_iter()
        .map(|mode| {
            let mut store = ParamStore::new();
            let m = MuAttFusion::new(&mut store, "mf", &[2, 3, 2], &[2, 4, 8], 1, mode, &RegionPyramidConfig::default(), &mut r)?;
            let xs: Vec<Tensor> = [(2, 8), (3, 4), (2, 2)].iter().map(|&(c, s)| rand_tensor(&[2, c, s, s], &mut r)).collect();
            grad_check_with(|t, st, xs| project(m.forward(&train_cx(t, st), xs)?, seed), &xs, &store, &opts(seed))
        })
        .collect();
    worst(reports)
}

fn module_crsatt(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 27);
    let mut store = ParamStore::new();
    let m = CrsAtt::new(&mut store, "ca", 4, &mut r);
    let a = rand_tensor(&[2, 4, 3, 4], &mut r);
    let b = rand_tensor(&[2, 4, 3, 4], &mut r);
    grad_check_with(|t, st, xs| project(m.forward(&train_cx(t, st), xs[0], xs[1])?, seed), &[a, b], &store, &opts(seed))
}

fn module_aspp(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 28);
    let reports: Vec<_> = [true, false]
        .into_iter()
        .map(|gated| {
            let mut store = ParamStore::new();
            let m = AdaptiveAspp::new(&mut store, "aspp", 3, 2, 3, &AsppConfig { rates: [1, 2, 3], gated }, &mut r)?;
            jitter_biases(&mut store, &mut r);
            let x = rand_tensor(&[2, 3, 5, 5], &mut r);
            grad_check_with(|t, st, xs| project(m.forward(&train_cx(t, st), xs[0])?, seed), &[x], &store, &opts(seed))
        })
        .collect();
    worst(reports)
}

/// Smallest classifier that still exercises every branch.
pub fn tiny_classifier_config(bands: usize, patch_size: usize) -> NetworkConfig {
    let mut cfg = NetworkConfig::classifier(bands, 3, patch_size, false);
    cfg.backbone.stage_widths = vec![2, 3, 3, 4, 4];
    cfg.backbone.stage_block_counts = vec![1, 1, 1, 1, 1];
    cfg.fusion_width = 2;
    cfg.feature_width = 4;
    cfg.fc_width = 4;
    cfg.spectral_widths = [4, 3, 2];
    cfg
}

/// Smallest segmenter that still exercises every branch.
pub fn tiny_segmenter_config() -> NetworkConfig {
    let mut cfg = NetworkConfig::segmenter(2, false);
    cfg.backbone.stem_width = 2;
    cfg.backbone.stage_widths = vec![4, 4, 4, 4];
    cfg.fusion_width = 2;
    cfg
}

fn network_classifier(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 29);
    let cfg = tiny_classifier_config(3, 5);
    let mut store = ParamStore::new();
    let net = SpatialSpectralNet::new(&mut store, &cfg, &mut r)?;
    jitter_biases(&mut store, &mut r);
    let x = rand_tensor(&[3, 3, 5, 5], &mut r);
    grad_check_with(
        |t, st, xs| project(net.forward(&Ctx::new(t, st, true, rng::from_u64(seed)), xs[0])?, seed),
        &[x],
        &store,
        &net_opts(seed),
    )
}

fn network_segmenter(seed: u64) -> Result<GradCheckReport> {
    let mut r = input_rng(seed, 30);
    let cfg = tiny_segmenter_config();
    let mut store = ParamStore::new();
    let net = HeavyFfpNet::new(&mut store, &cfg, &mut r)?;
    jitter_biases(&mut store, &mut r);
    let x = rand_tensor(&[1, 3, 32, 32], &mut r);
    grad_check_with(|t, st, xs| project(net.forward(&train_cx(t, st), xs[0])?, seed), &[x], &store, &net_opts(seed))
}

macro_rules! checks {
    ($($kind:ident $name:literal => $f:ident),* $(,)?) => {
        vec![$(Check { name: $name, kind: CheckKind::$kind, run: $f }),*]
    };
}

/// Every registered check, ops first.
pub fn suite() -> Vec<Check> {
    checks![
        Op "conv2d" => op_conv2d,
        Op "linear" => op_linear,
        Op "relu" => op_relu,
        Op "sigmoid" => op_sigmoid,
        Op "softmax" => op_softmax,
        Op "log_softmax" => op_log_softmax,
        Op "maxpool" => op_maxpool,
        Op "global_avg_pool" => op_gap,
        Op "resize_bilinear" => op_bilinear,
        Op "resize_nearest" => op_nearest,
        Op "region_pool" => op_region_pool,
        Op "region_broadcast" => op_region_broadcast,
        Op "concat_narrow" => op_concat_narrow,
        Op "mul_broadcast" => op_mul_broadcast,
        Op "batch_norm" => op_batch_norm,
        Op "batch_norm_eval" => op_batch_norm_eval,
        Op "dropout" => op_dropout,
        Op "cross_entropy" => op_cross_entropy,
        Op "ba_loss" => op_ba_loss,
        Module "resconv" => module_resconv,
        Module "region_self_attention" => module_region_attention,
        Module "repyatt" => module_repyatt,
        Module "dam" => module_dam,
        Module "uam" => module_uam,
        Module "attfuse" => module_attfuse,
        Module "muattfusion" => module_muattfusion,
        Module "crsatt" => module_crsatt,
        Module "adaptive_aspp" => module_aspp,
        Network "spatial_spectral_net" => network_classifier,
        Network "heavy_ffpnet" => network_segmenter,
    ]
}

/// Runs the checks whose name (or kind: `ops`, `modules`, `networks`) is in
/// `only`, or all of them when `only` is empty.
pub fn run_suite(seed: u64, only: &[String]) -> Result<Vec<CheckResult>> {
    let all = suite();
    let selected: Vec<&Check> = all
        .iter()
        .filter(|c| only.is_empty() || only.iter().any(|o| o == c.name || o.trim_end_matches('s') == c.kind.label()))
        .collect();
    if selected.is_empty() {
        let names: Vec<&str> = all.iter().map(|c| c.name).collect();
        return Err(Error::Usage(format!("no gradient check matches {only:?}; known checks: {}", names.join(", "))));
    }
    selected
        .into_iter()
        .map(|c| {
            let rep = (c.run)(seed)?;
            Ok(CheckResult {
                name: c.name,
                kind: c.kind,
                tolerance: c.kind.tolerance(),
                max_rel_error: rep.max_rel_error,
                worst: rep.worst,
                coords_checked: rep.coords_checked,
            })
        })
        .collect()
}
