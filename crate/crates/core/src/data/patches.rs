use rand::seq::index;

use crate::data::augment::augment;
use crate::data::cube::HyperCube;
use crate::error::{config_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::training::{Batch, TrainSource};

/// Training samples drawn for a class holding `n` labeled pixels under
/// threshold `t`: all of `t` when the class is large enough, else half.
pub fn sample_per_class(n: usize, t: usize) -> usize {
    if n >= 2 * t {
        t
    } else {
        n / 2
    }
}

/// A labeled pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sample {
    pub row: usize,
    pub col: usize,
    pub label: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset {
    pub patch_size: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl PatchDataset {
    pub fn train_counts(&self, num_classes: usize) -> Vec<usize> {
        count(&self.train, num_classes)
    }

    pub fn test_counts(&self, num_classes: usize) -> Vec<usize> {
        count(&self.test, num_classes)
    }
}

fn count(samples: &[Sample], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for s in samples {
        c[s.label as usize - 1] += 1;
    }
    c
}

/// Splits the labeled pixels of `cube` into per-class training draws and a
/// test set holding everything else. Classes without pixels are skipped.
pub fn build_patch_dataset(cube: &HyperCube, patch_size: usize, threshold: usize, rng: &mut Rng) -> Result<PatchDataset> {
    if patch_size == 0 || patch_size % 2 == 0 {
        return Err(config_err!("patch size must be odd, got {patch_size}"));
    }
    let w = cube.width();
    let mut by_class: Vec<Vec<Sample>> = vec![Vec::new(); cube.num_classes()];
    for (i, &l) in cube.labels.iter().enumerate() {
        if l > 0 {
            by_class[l as usize - 1].push(Sample { row: i / w, col: i % w, label: l });
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, pixels) in by_class.iter().enumerate() {
        if pixels.is_empty() {
            log::warn!("class {} ({}) has no labeled pixels; skipped", c + 1, cube.class_names[c]);
            continue;
        }
        let k = sample_per_class(pixels.len(), threshold);
        let mut chosen = vec![false; pixels.len()];
        for i in index::sample(rng, pixels.len(), k) {
            chosen[i] = true;
        }
        for (s, picked) in pixels.iter().zip(chosen) {
            if picked {
                train.push(*s);
            } else {
                test.push(*s);
            }
        }
    }
    Ok(PatchDataset { patch_size, train, test })
}

/// Reflects `i` into `0..n` without repeating the edge sample.
fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// The `p×d×d` neighbourhood centred on (`row`, `col`), mirror-padded at the
/// image border.
pub fn extract_patch(cube: &HyperCube, row: usize, col: usize, d: usize) -> Result<Tensor> {
    if d % 2 == 0 {
        return Err(config_err!("patch size must be odd, got {d}"));
    }
    let (p, h, w) = (cube.num_bands(), cube.height(), cube.width());
    let r = (d / 2) as isize;
    let rows: Vec<usize> = (-r..=r).map(|o| mirror(row as isize + o, h)).collect();
    let cols: Vec<usize> = (-r..=r).map(|o| mirror(col as isize + o, w)).collect();
    let src = cube.bands.data();
    let mut out = Vec::with_capacity(p * d * d);
    for b in 0..p {
        for &y in &rows {
            for &x in &cols {
                out.push(src[(b * h + y) * w + x]);
            }
        }
    }
    Tensor::new(&[p, d, d], out)
}

/// Patch batches over a sample list, optionally with random D4 augmentation.
#[derive(Debug, Clone, Copy)]
pub struct PatchSource<'a> {
    pub cube: &'a HyperCube,
    pub samples: &'a [Sample],
    pub patch_size: usize,
    pub augment: bool,
}

impl PatchSource<'_> {
    /// Unaugmented patches for `samples[start..start + len]`.
    pub fn chunk(&self, start: usize, len: usize) -> Result<Tensor> {
        let patches = self.samples[start..start + len]
            .iter()
            .map(|s| extract_patch(self.cube, s.row, s.col, self.patch_size))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&patches)
    }
}

impl TrainSource for PatchSource<'_> {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn batch(&self, indices: &[usize], rng: &mut Rng) -> Result<Batch> {
        let mut patches = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self.samples[i];
            let patch = extract_patch(self.cube, s.row, s.col, self.patch_size)?;
            patches.push(augment(&patch, rng, self.augment)?);
            labels.push(s.label);
        }
        Ok(Batch { inputs: Tensor::stack(&patches)?, labels })
    }
}
