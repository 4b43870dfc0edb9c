use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Ba,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub ba_boundary_radius: usize,
    pub ba_weight: f64,
    pub ignore_label: i32,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { kind: LossKind::Ce, ba_boundary_radius: 2, ba_weight: 2.0, ignore_label: 0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ba_weight >= 1.0 && self.ba_weight.is_finite()) {
            return Err(Error::Config(format!("loss.ba_weight must be a finite value ≥ 1, got {}", self.ba_weight)));
        }
        Ok(())
    }
}

/// Maps 1-based labels to 0-based class indices, `None` where ignored.
fn targets(labels: &[i32], classes: usize, ignore: i32) -> Result<Vec<Option<usize>>> {
    labels
        .iter()
        .map(|&l| {
            if l == ignore {
                Ok(None)
            } else if l >= 1 && (l as usize) <= classes {
                Ok(Some(l as usize - 1))
            } else {
                Err(Error::Usage(format!("label {l} outside 1..={classes} (ignore label {ignore})")))
            }
        })
        .collect()
}

/// `Σ w·(−log p_true) / Σ w` over non-ignored positions of `N×K` or `N×K×H×W`
/// logits. `weights` has one entry per label; `None` means all ones.
pub fn weighted_cross_entropy<'t>(logits: Var<'t>, labels: &[i32], weights: Option<&[f64]>, ignore: i32) -> Result<Var<'t>> {
    let shape = logits.shape();
    if shape.len() < 2 {
        return Err(Error::Usage(format!("logits must be N×K[×…], got {shape:?}")));
    }
    let t = targets(labels, shape[1], ignore)?;
    if let Some(w) = weights {
        if w.len() != t.len() {
            return Err(Error::Usage(format!("{} weights for {} labels", w.len(), t.len())));
        }
    }
    let w: Vec<f64> = t
        .iter()
        .enumerate()
        .map(|(i, t)| if t.is_some() { weights.map_or(1.0, |w| w[i]) } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return Err(Error::UndefinedMetric("every position is ignored; the mean loss is undefined".into()));
    }
    let picked = logits.log_softmax(1)?.gather_axis1(Rc::new(t))?;
    let coeff = Tensor::new(picked.shape().as_slice(), w.iter().map(|v| -v / total).collect())?;
    Ok(picked.mul(logits.tape().constant(coeff))?.sum())
}

pub fn cross_entropy<'t>(logits: Var<'t>, labels: &[i32], ignore: i32) -> Result<Var<'t>> {
    weighted_cross_entropy(logits, labels, None, ignore)
}

/// Per-pixel weights for `n` stacked `h×w` label maps: `beta` where a
/// different non-ignored label lies within Chebyshev distance `radius`,
/// otherwise 1.
pub fn boundary_weights(labels: &[i32], n: usize, h: usize, w: usize, radius: usize, beta: f64, ignore: i32) -> Vec<f64> {
    let mut out = vec![1.0; labels.len()];
    for b in 0..n {
        let map = &labels[b * h * w..(b + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let l = map[y * w + x];
                if l == ignore {
                    continue;
                }
                let near = (y.saturating_sub(radius)..(y + radius + 1).min(h))
                    .any(|yy| (x.saturating_sub(radius)..(x + radius + 1).min(w)).any(|xx| {
                        let o = map[yy * w + xx];
                        o != ignore && o != l
                    }));
                if near {
                    out[b * h * w + y * w + x] = beta;
                }
            }
        }
    }
    out
}

/// Cross-entropy or boundary-aware loss per `cfg`. Boundary weighting needs
/// `N×K×H×W` logits.
pub fn loss<'t>(logits: Var<'t>, labels: &[i32], cfg: &LossConfig) -> Result<Var<'t>> {
    match cfg.kind {
        LossKind::Ce => cross_entropy(logits, labels, cfg.ignore_label),
        LossKind::Ba => {
            let s = logits.shape();
            let [n, _, h, w] = s[..] else {
                return Err(Error::Usage(format!("boundary-aware loss needs N×K×H×W logits, got {s:?}")));
            };
            if labels.len() != n * h * w {
                return Err(Error::Usage(format!("{} labels for {n}×{h}×{w} positions", labels.len())));
            }
            let wts = boundary_weights(labels, n, h, w, cfg.ba_boundary_radius, cfg.ba_weight, cfg.ignore_label);
            weighted_cross_entropy(logits, labels, Some(&wts), cfg.ignore_label)
        }
    }
}
