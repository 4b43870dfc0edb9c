use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{DataPaths, RunConfig, SegPairPaths, Task};
use crate::autograd::Tape;
use crate::data::{
    build_patch_dataset, extract_patch, load_cube, load_seg_pair, normalize_band_mean, normalize_global, read_class_names, read_ppm,
    write_ppm, HyperCube, Palette, PatchDataset, PatchSource, Sample, SegSample, SegSource,
};
use crate::error::{config_err, Error, Result};
use crate::metrics::{emit_reports, erode_boundary_mask, ConfusionMatrix, MetricsReport};
use crate::networks::{HeavyFfpNet, SpatialSpectralNet};
use crate::nn::{Ctx, ParamStore};
use crate::rng::{self, Stream};
use crate::tensor::ffpt::Array;
use crate::tensor::Tensor;
use crate::training::{predict_classes, save_checkpoint, train_loop, Optimizer};

const INFER_BATCH: usize = 128;

pub enum Net {
    Classifier(SpatialSpectralNet),
    Segmenter(HeavyFfpNet),
}

impl Net {
    pub fn build(cfg: &RunConfig, store: &mut ParamStore) -> Result<Self> {
        let net_cfg = cfg.network.as_ref().ok_or_else(|| config_err!("network is unresolved"))?;
        let mut init = rng::stream(cfg.seed.unwrap_or_default(), Stream::Init);
        Ok(match cfg.task {
            Task::Classify => Net::Classifier(SpatialSpectralNet::new(store, net_cfg, &mut init)?),
            Task::Segment => Net::Segmenter(HeavyFfpNet::new(store, net_cfg, &mut init)?),
        })
    }

    fn infer(&self, store: &ParamStore, x: Tensor) -> Result<Vec<i32>> {
        let tape = Tape::new();
        let cx = Ctx::eval(&tape, store);
        let logits = match self {
            Net::Classifier(n) => n.forward(&cx, cx.input(x))?,
            Net::Segmenter(n) => n.forward(&cx, cx.input(x))?,
        };
        predict_classes(&logits.value())
    }
}

/// Eval-mode class of the patch centred on each pixel.
pub fn classify_pixels(net: &Net, store: &ParamStore, cube: &HyperCube, d: usize, pixels: &[(usize, usize)]) -> Result<Vec<i32>> {
    let mut out = Vec::with_capacity(pixels.len());
    for chunk in pixels.chunks(INFER_BATCH) {
        let patches = chunk.iter().map(|&(r, c)| extract_patch(cube, r, c, d)).collect::<Result<Vec<_>>>()?;
        out.extend(net.infer(store, Tensor::stack(&patches)?)?);
    }
    Ok(out)
}

/// Eval-mode class map of one `3×H×W` image.
pub fn segment_image(net: &Net, store: &ParamStore, image: &Tensor) -> Result<Vec<i32>> {
    let s = image.shape().to_vec();
    net.infer(store, image.reshape(&[1, s[0], s[1], s[2]])?)
}

fn prepare_cube(cube: &HyperCube) -> Result<HyperCube> {
    normalize_band_mean(&normalize_global(cube)?)
}

fn required<'a>(p: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| config_err!("data.{field} is required for this task"))
}

fn load_palette(cfg: &RunConfig, k: usize) -> Result<Palette> {
    match &cfg.data.palette {
        Some(p) => Palette::load(p),
        None => Ok(Palette::generated(k)),
    }
}

struct SegData {
    train: Vec<SegSample>,
    eval: Vec<SegSample>,
    names: Vec<String>,
}

fn load_pairs(pairs: &[SegPairPaths], palette: &Path) -> Result<Vec<SegSample>> {
    pairs.iter().map(|p| load_seg_pair(&p.image, &p.labels, palette)).collect()
}

fn load_seg_data(cfg: &RunConfig) -> Result<SegData> {
    let palette_path = required(&cfg.data.palette, "palette")?;
    let train = load_pairs(&cfg.data.images, palette_path)?;
    let eval = if cfg.data.eval_images.is_empty() { train.clone() } else { load_pairs(&cfg.data.eval_images, palette_path)? };
    let names = match &cfg.data.classes {
        Some(p) => read_class_names(p)?,
        None => {
            let k = Palette::load(palette_path)?.entries.iter().map(|e| e.1).max().unwrap_or(0);
            (1..=k).map(|c| format!("class_{c}")).collect()
        }
    };
    let k = names.len() as i32;
    for s in train.iter().chain(&eval) {
        if let Some(bad) = s.labels.iter().find(|&&l| l > k) {
            return Err(Error::Validation(format!("label {bad} exceeds the {k} named classes")));
        }
    }
    Ok(SegData { train, eval, names })
}

fn load_classify_data(cfg: &RunConfig) -> Result<HyperCube> {
    let cube = load_cube(required(&cfg.data.bands, "bands")?, required(&cfg.data.labels, "labels")?, required(&cfg.data.classes, "classes")?)?;
    prepare_cube(&cube)
}

fn split(cfg: &RunConfig, cube: &HyperCube) -> Result<PatchDataset> {
    let mut sampler = rng::stream(cfg.seed.unwrap_or_default(), Stream::Sampler);
    build_patch_dataset(cube, cfg.patch_size.unwrap_or_default(), cfg.threshold.unwrap_or_default(), &mut sampler)
}

fn accuracy(pred: &[i32], truth: &[i32]) -> f64 {
    let (hit, n) = pred.iter().zip(truth).filter(|(_, &t)| t != 0).fold((0, 0), |(h, n), (p, t)| (h + (p == t) as usize, n + 1));
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

fn sample_confusion(cube: &HyperCube, samples: &[Sample], pred: &[i32], mask: &[bool]) -> Result<ConfusionMatrix> {
    let w = cube.width();
    let mut cm = ConfusionMatrix::new(cube.num_classes());
    let keep: Vec<bool> = samples.iter().map(|s| mask[s.row * w + s.col]).collect();
    let truth: Vec<i32> = samples.iter().map(|s| s.label).collect();
    cm.accumulate(&truth, pred, Some(&keep))?;
    Ok(cm)
}

fn metrics_or_null(cm: &ConfusionMatrix, names: &[String]) -> Result<serde_json::Value> {
    if cm.total() == 0 {
        return Ok(serde_json::Value::Null);
    }
    Ok(serde_json::to_value(MetricsReport::from_matrix(cm, names)?)?)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub report: serde_json::Value,
}

/// Trains from a config, then writes the checkpoint and `report.json` into
/// the configured output directory.
pub fn train(mut cfg: RunConfig) -> Result<TrainOutcome> {
    match cfg.task {
        Task::Classify => train_classifier(&mut cfg),
        Task::Segment => train_segmenter(&mut cfg),
    }
}

fn eval_due(calls: &mut usize, every: usize, epochs: usize) -> bool {
    let epoch = *calls;
    *calls += 1;
    epoch == 0 || epoch == epochs || (every > 0 && epoch % every == 0)
}

fn finish(cfg: &RunConfig, store: &ParamStore, optimizer: &Optimizer, report: serde_json::Value) -> Result<TrainOutcome> {
    let out = cfg.out.clone().ok_or_else(|| config_err!("out is unresolved"))?;
    save_checkpoint(&out, store, optimizer, &report)?;
    info!("checkpoint written to {}", out.display());
    Ok(TrainOutcome { checkpoint: out, report })
}

fn train_classifier(cfg: &mut RunConfig) -> Result<TrainOutcome> {
    let cube = load_classify_data(cfg)?;
    cfg.resolve(cube.num_bands(), cube.num_classes());
    cfg.validate(cube.num_bands(), cube.num_classes())?;
    let ds = split(cfg, &cube)?;
    let k = cube.num_classes();
    info!("classification split: {} train / {} test patches", ds.train.len(), ds.test.len());
    let mut store = ParamStore::new();
    let net = Net::build(cfg, &mut store)?;
    let Net::Classifier(model) = &net else { unreachable!() };
    let tc = cfg.train_config()?;
    let mut optimizer = Optimizer::new(tc.optimizer.clone())?;
    let d = ds.patch_size;
    let source = PatchSource { cube: &cube, samples: &ds.train, patch_size: d, augment: cfg.augment.unwrap_or(false) };
    let test_px: Vec<(usize, usize)> = ds.test.iter().map(|s| (s.row, s.col)).collect();
    let test_truth: Vec<i32> = ds.test.iter().map(|s| s.label).collect();
    let (every, mut calls) = (cfg.eval_every.unwrap_or(0), 0);
    let training = train_loop(model, &mut store, &source, &tc, &mut optimizer, |st| {
        let mut m = BTreeMap::new();
        if eval_due(&mut calls, every, tc.epochs) && !test_px.is_empty() {
            m.insert("test_oa".to_string(), accuracy(&classify_pixels(&net, st, &cube, d, &test_px)?, &test_truth));
        }
        Ok(m)
    })?;
    let pred = classify_pixels(&net, &store, &cube, d, &test_px)?;
    let mask = erode_boundary_mask(&cube.labels, cube.height(), cube.width(), cfg.erode.unwrap_or(0))?;
    let cm = sample_confusion(&cube, &ds.test, &pred, &mask)?;
    let report = json!({
        "config": cfg,
        "dataset": {
            "bands": cube.num_bands(),
            "height": cube.height(),
            "width": cube.width(),
            "train_per_class": ds.train_counts(k),
            "test_per_class": ds.test_counts(k),
        },
        "trainable_parameters": store.num_trainable(),
        "training": training,
        "test_metrics": metrics_or_null(&cm, &cube.class_names)?,
    });
    finish(cfg, &store, &optimizer, report)
}

fn seg_confusion(net: &Net, store: &ParamStore, samples: &[SegSample], k: usize, erode: usize) -> Result<(ConfusionMatrix, Vec<Vec<i32>>)> {
    let mut cm = ConfusionMatrix::new(k);
    let mut maps = Vec::with_capacity(samples.len());
    for s in samples {
        let pred = segment_image(net, store, &s.image)?;
        let mask = erode_boundary_mask(&s.labels, s.height(), s.width(), erode)?;
        cm.accumulate(&s.labels, &pred, Some(&mask))?;
        maps.push(pred);
    }
    Ok((cm, maps))
}

fn train_segmenter(cfg: &mut RunConfig) -> Result<TrainOutcome> {
    let data = load_seg_data(cfg)?;
    let k = data.names.len();
    cfg.resolve(3, k);
    cfg.validate(3, k)?;
    let mut store = ParamStore::new();
    let net = Net::build(cfg, &mut store)?;
    let Net::Segmenter(model) = &net else { unreachable!() };
    let tc = cfg.train_config()?;
    let mut optimizer = Optimizer::new(tc.optimizer.clone())?;
    let source = SegSource { samples: data.train.clone() };
    let (every, mut calls) = (cfg.eval_every.unwrap_or(0), 0);
    let training = train_loop(model, &mut store, &source, &tc, &mut optimizer, |st| {
        let mut m = BTreeMap::new();
        if eval_due(&mut calls, every, tc.epochs) {
            let (cm, _) = seg_confusion(&net, st, &data.eval, k, 0)?;
            m.insert("pixel_accuracy".to_string(), cm.trace() as f64 / cm.total().max(1) as f64);
        }
        Ok(m)
    })?;
    let (cm, _) = seg_confusion(&net, &store, &data.eval, k, cfg.erode.unwrap_or(0))?;
    let report = json!({
        "config": cfg,
        "dataset": { "train_images": data.train.len(), "eval_images": data.eval.len() },
        "trainable_parameters": store.num_trainable(),
        "training": training,
        "test_metrics": metrics_or_null(&cm, &data.names)?,
    });
    finish(cfg, &store, &optimizer, report)
}

/// Reads `report.json` from a checkpoint and rebuilds the trained network.
pub fn load_checkpoint(dir: &Path) -> Result<(RunConfig, ParamStore, Net)> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let report: serde_json::Value = serde_json::from_str(&text)?;
    let cfg: RunConfig = serde_json::from_value(report.get("config").cloned().ok_or_else(|| Error::Validation(format!("{}: no config echo", path.display())))?)?;
    let mut store = ParamStore::new();
    let net = Net::build(&cfg, &mut store)?;
    store.load(dir)?;
    Ok((cfg, store, net))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Test,
    Train,
    All,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub out: Option<PathBuf>,
    /// Replaces the checkpoint's dataset paths.
    pub data: Option<DataPaths>,
    pub erode: Option<usize>,
    pub split: Split,
    /// Classify only labeled pixels instead of sliding over the whole map.
    pub labeled_only: bool,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub metrics: MetricsReport,
    pub evaluated: u64,
    pub files: Vec<PathBuf>,
}

/// Eval-mode metrics for a checkpoint on its configured data.
pub fn evaluate(checkpoint: &Path, opts: &EvalOptions) -> Result<EvalOutcome> {
    let (mut cfg, store, net) = load_checkpoint(checkpoint)?;
    if let Some(data) = &opts.data {
        cfg.data = data.clone();
    }
    let out = opts.out.clone().unwrap_or_else(|| checkpoint.join("eval"));
    let erode = opts.erode.or(cfg.erode).unwrap_or(0);
    let (cm, names, map, palette) = match cfg.task {
        Task::Classify => {
            let cube = load_classify_data(&cfg)?;
            cfg.validate(cube.num_bands(), cube.num_classes())?;
            let ds = split(&cfg, &cube)?;
            let samples: Vec<Sample> = match opts.split {
                Split::Test => ds.test.clone(),
                Split::Train => ds.train.clone(),
                Split::All => {
                    let mut all: Vec<Sample> = ds.train.iter().chain(&ds.test).copied().collect();
                    all.sort();
                    all
                }
            };
            let (h, w) = (cube.height(), cube.width());
            let pixels: Vec<(usize, usize)> = if opts.labeled_only {
                (0..h * w).filter(|&i| cube.labels[i] != 0).map(|i| (i / w, i % w)).collect()
            } else {
                (0..h * w).map(|i| (i / w, i % w)).collect()
            };
            let pred = classify_pixels(&net, &store, &cube, ds.patch_size, &pixels)?;
            let mut map = vec![0; h * w];
            for (&(r, c), p) in pixels.iter().zip(pred) {
                map[r * w + c] = p;
            }
            let at: Vec<i32> = samples.iter().map(|s| map[s.row * w + s.col]).collect();
            let mask = erode_boundary_mask(&cube.labels, h, w, erode)?;
            let cm = sample_confusion(&cube, &samples, &at, &mask)?;
            let palette = load_palette(&cfg, cube.num_classes())?;
            (cm, cube.class_names.clone(), Some((map, h, w)), palette)
        }
        Task::Segment => {
            let data = load_seg_data(&cfg)?;
            cfg.validate(3, data.names.len())?;
            let samples = match opts.split {
                Split::Train => &data.train,
                Split::Test | Split::All => &data.eval,
            };
            let (cm, maps) = seg_confusion(&net, &store, samples, data.names.len(), erode)?;
            let first = samples.first().zip(maps.into_iter().next()).map(|(s, m)| (m, s.height(), s.width()));
            let palette = load_palette(&cfg, data.names.len())?;
            (cm, data.names, first, palette)
        }
    };
    let metrics = MetricsReport::from_matrix(&cm, &names)?;
    let classmap = map.as_ref().map(|(m, h, w)| (m.as_slice(), *h, *w, &palette));
    let files = emit_reports(&cm, &metrics, &names, classmap, &out)?;
    Ok(EvalOutcome { metrics, evaluated: cm.total(), files })
}

/// Predicts a class map for a new input: an FFPT band stack for
/// classification, a P6 image for segmentation. Writes `classmap.ppm` and
/// `prediction.ffpt` (i32 labels) into `out`.
pub fn predict(checkpoint: &Path, input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let (cfg, store, net) = load_checkpoint(checkpoint)?;
    let net_cfg = cfg.network.as_ref().ok_or_else(|| config_err!("checkpoint config has no network"))?;
    let k = net_cfg.num_classes;
    let (map, h, w) = match cfg.task {
        Task::Classify => {
            let bands = Array::read(input)?.to_tensor()?;
            let s = bands.shape().to_vec();
            if s.len() != 3 || s[0] != net_cfg.backbone.input_channels {
                return Err(config_err!("input {s:?} does not match the checkpoint's {} bands", net_cfg.backbone.input_channels));
            }
            let names = (1..=k).map(|c| format!("class_{c}")).collect();
            let cube = prepare_cube(&HyperCube::new(bands, vec![0; s[1] * s[2]], names)?)?;
            let pixels: Vec<(usize, usize)> = (0..s[1] * s[2]).map(|i| (i / s[2], i % s[2])).collect();
            (classify_pixels(&net, &store, &cube, net_cfg.patch_size, &pixels)?, s[1], s[2])
        }
        Task::Segment => {
            let (w, h, rgb) = read_ppm(input)?;
            let area = w * h;
            let image = Tensor::from_fn(&[3, h, w], |i| rgb[(i % area) * 3 + i / area] as f64 / 255.0);
            (segment_image(&net, &store, &image)?, h, w)
        }
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let palette = load_palette(&cfg, k)?;
    let files = vec![out.join("classmap.ppm"), out.join("prediction.ffpt")];
    write_ppm(&files[0], w, h, &palette.render(&map))?;
    Array::from_labels(&[h, w], &map)?.write(&files[1])?;
    Ok(files)
}
