//! Confusion matrices, accuracy metrics and report files.

mod report;

pub use report::{emit_reports, heat_map, ClassReport, MetricsReport, HEAT_MAP_CELL};

use crate::error::{Error, Result};

/// `K×K` counts; rows are true classes, columns predictions. Class `c`
/// (1-based) lives at index `c − 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Usage(format!("{k}×{k} matrix needs {} counts, got {}", k * k, counts.len())));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        Self::from_counts(k, rows.iter().flatten().copied().collect())
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Count for 0-based (true, predicted).
    pub fn get(&self, t: usize, p: usize) -> u64 {
        self.counts[t * self.k + p]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, t: usize) -> u64 {
        self.counts[t * self.k..(t + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, p: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, p)).sum()
    }

    /// Adds one count per position where `mask` is set (every position when
    /// `mask` is `None`). Labels are 1-based.
    pub fn accumulate(&mut self, truth: &[i32], pred: &[i32], mask: Option<&[bool]>) -> Result<()> {
        if truth.len() != pred.len() || mask.is_some_and(|m| m.len() != truth.len()) {
            return Err(Error::Usage(format!(
                "accumulate needs equal lengths, got truth {} pred {} mask {:?}",
                truth.len(),
                pred.len(),
                mask.map(<[bool]>::len)
            )));
        }
        let k = self.k as i32;
        let mut updates = Vec::with_capacity(truth.len());
        for (i, (&t, &p)) in truth.iter().zip(pred).enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            if !(1..=k).contains(&t) || !(1..=k).contains(&p) {
                return Err(Error::Usage(format!("label pair (true {t}, predicted {p}) at position {i} outside 1..={k}")));
            }
            updates.push((t as usize - 1) * self.k + p as usize - 1);
        }
        for u in updates {
            self.counts[u] += 1;
        }
        Ok(())
    }

    /// Elementwise sum of independently accumulated matrices.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Usage(format!("cannot merge {}-class and {}-class matrices", self.k, other.k)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    fn require_total(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::UndefinedMetric("confusion matrix is empty".into())),
            n => Ok(n as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverallMetrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

/// Overall accuracy, mean per-class recall over classes present in the
/// ground truth, and Cohen's kappa.
pub fn overall_metrics(cm: &ConfusionMatrix) -> Result<OverallMetrics> {
    let n = cm.require_total()?;
    let oa = cm.trace() as f64 / n;
    let recalls: Vec<f64> =
        (0..cm.k).filter(|&c| cm.row_sum(c) > 0).map(|c| cm.get(c, c) as f64 / cm.row_sum(c) as f64).collect();
    let aa = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let pe = (0..cm.k).map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64).sum::<f64>() / (n * n);
    let kappa = if pe == 1.0 { 1.0 } else { (oa - pe) / (1.0 - pe) };
    Ok(OverallMetrics { oa, aa, kappa })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerClassMetrics {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub iou: Vec<f64>,
    /// Classes with at least one ground-truth count.
    pub present: Vec<bool>,
    pub mean_f1: f64,
    pub miou: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<PerClassMetrics> {
    cm.require_total()?;
    let k = cm.k;
    let mut m = PerClassMetrics {
        precision: Vec::with_capacity(k),
        recall: Vec::with_capacity(k),
        f1: Vec::with_capacity(k),
        iou: Vec::with_capacity(k),
        present: Vec::with_capacity(k),
        mean_f1: 0.0,
        miou: 0.0,
    };
    for c in 0..k {
        let (tp, rows, cols) = (cm.get(c, c), cm.row_sum(c), cm.col_sum(c));
        let (p, r) = (ratio(tp, cols), ratio(tp, rows));
        m.precision.push(p);
        m.recall.push(r);
        m.f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        m.iou.push(ratio(tp, rows + cols - tp));
        m.present.push(rows > 0);
    }
    let present = m.present.iter().filter(|&&p| p).count() as f64;
    let mean = |v: &[f64]| v.iter().zip(&m.present).filter(|(_, &p)| p).map(|(x, _)| x).sum::<f64>() / present;
    m.mean_f1 = mean(&m.f1);
    m.miou = mean(&m.iou);
    Ok(m)
}

/// Pixels that stay valid for evaluation: labeled, and with no differently
/// labeled (or unlabeled) pixel within Chebyshev distance `r`.
pub fn erode_boundary_mask(labels: &[i32], h: usize, w: usize, r: usize) -> Result<Vec<bool>> {
    if labels.len() != h * w {
        return Err(Error::Usage(format!("{h}×{w} mask needs {} labels, got {}", h * w, labels.len())));
    }
    // separable sliding min/max: a window is uniform iff its min equals its max
    let window = |src: &[i32], len: usize, stride: usize, count: usize, outer: usize, pick: fn(i32, i32) -> i32| {
        let mut out = src.to_vec();
        for o in 0..count {
            let base = o * outer;
            for i in 0..len {
                let lo = i.saturating_sub(r);
                let hi = (i + r).min(len - 1);
                out[base + i * stride] = (lo..=hi).map(|j| src[base + j * stride]).reduce(pick).unwrap_or(0);
            }
        }
        out
    };
    let rows_min = window(labels, w, 1, h, w, i32::min);
    let rows_max = window(labels, w, 1, h, w, i32::max);
    let lo = window(&rows_min, h, w, w, 1, i32::min);
    let hi = window(&rows_max, h, w, w, 1, i32::max);
    Ok((0..h * w).map(|i| labels[i] != 0 && lo[i] == hi[i]).collect())
}
