use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{loss, LossConfig};
use super::optim::{Optimizer, OptimizerConfig};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::networks::{HeavyFfpNet, SpatialSpectralNet};
use crate::nn::{Ctx, ParamStore};
use crate::rng::{self, Rng, Stream};
use crate::tensor::Tensor;

pub trait Model {
    fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>>;
}

impl Model for HeavyFfpNet {
    fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        HeavyFfpNet::forward(self, cx, x)
    }
}

impl Model for SpatialSpectralNet {
    fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        SpatialSpectralNet::forward(self, cx, x)
    }
}

/// Stacked inputs and their 1-based labels, one per output position.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<i32>,
}

pub trait TrainSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Assembles the samples at `indices`; `rng` drives augmentation.
    fn batch(&self, indices: &[usize], rng: &mut Rng) -> Result<Batch>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.loss.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    pub loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub lr: Option<f64>,
    pub eval: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub records: Vec<EpochRecord>,
}

/// 1-based argmax over axis 1 of `N×K` or `N×K×H×W` logits, first index on ties.
pub fn predict_classes(logits: &Tensor) -> Result<Vec<i32>> {
    let s = logits.shape();
    if s.len() < 2 {
        return Err(Error::Usage(format!("logits must be N×K[×…], got {s:?}")));
    }
    let (n, k) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    let d = logits.data();
    let mut out = Vec::with_capacity(n * inner);
    for b in 0..n {
        for i in 0..inner {
            let mut best = 0;
            for c in 1..k {
                if d[(b * k + c) * inner + i] > d[(b * k + best) * inner + i] {
                    best = c;
                }
            }
            out.push(best as i32 + 1);
        }
    }
    Ok(out)
}

fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
    }
    out
}

/// Runs `cfg.epochs` shuffled passes over `data`.
///
/// `evaluate` is called before training and after every epoch; its scalars go
/// into the report. A final batch of one sample is dropped when other batches
/// exist, since batch statistics need more than one value per channel.
pub fn train_loop<M: Model>(
    model: &M,
    store: &mut ParamStore,
    data: &dyn TrainSource,
    cfg: &TrainConfig,
    optimizer: &mut Optimizer,
    mut evaluate: impl FnMut(&ParamStore) -> Result<BTreeMap<String, f64>>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let per_epoch = batches(&order, cfg.batch_size).len();
    let max_iter = per_epoch * cfg.epochs;
    let mut records = vec![EpochRecord { epoch: 0, loss: None, train_accuracy: None, lr: None, eval: evaluate(store)? }];
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::substream(cfg.seed, Stream::Shuffle, epoch as u64));
        let (mut loss_sum, mut correct, mut seen, mut lr) = (0.0, 0usize, 0usize, 0.0);
        for idx in batches(&order, cfg.batch_size) {
            let batch = data.batch(idx, &mut rng::substream(cfg.seed, Stream::Augment, step as u64))?;
            lr = cfg.optimizer.lr_at(step, max_iter)?;
            let (value, grads, updates, preds) = {
                let tape = Tape::new();
                let cx = Ctx::new(&tape, store, true, rng::substream(cfg.seed, Stream::Dropout, step as u64));
                let logits = model.forward(&cx, cx.input(batch.inputs))?;
                let l = loss(logits, &batch.labels, &cfg.loss)?;
                let value = l.value().item();
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("loss is {value} at epoch {epoch}, step {step}")));
                }
                let preds = predict_classes(&logits.value())?;
                let grads = tape.backward(l)?.params();
                (value, grads, tape.take_buffer_updates(), preds)
            };
            store.apply_buffer_updates(updates)?;
            optimizer.step(store, &grads, lr)?;
            loss_sum += value;
            for (p, &t) in preds.iter().zip(&batch.labels) {
                if t != cfg.loss.ignore_label {
                    seen += 1;
                    correct += usize::from(*p == t);
                }
            }
            step += 1;
        }
        let mean_loss = loss_sum / per_epoch as f64;
        let accuracy = if seen > 0 { correct as f64 / seen as f64 } else { 0.0 };
        info!("epoch {epoch}: loss {mean_loss:.6}, train accuracy {accuracy:.4}");
        records.push(EpochRecord { epoch, loss: Some(mean_loss), train_accuracy: Some(accuracy), lr: Some(lr), eval: evaluate(store)? });
    }
    Ok(TrainReport { steps: step, records })
}

/// Writes `manifest.txt`, `params/`, `optimizer/` and `report.json` into `dir`.
pub fn save_checkpoint(dir: &Path, store: &ParamStore, optimizer: &Optimizer, report: &serde_json::Value) -> Result<()> {
    store.save(dir)?;
    optimizer.save(store, &dir.join("optimizer"))?;
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(report)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
