use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::cube::{save_cube, HyperCube};
use crate::data::image::{write_ppm, Palette, Rgb, SegSample};
use crate::error::{config_err, Error, Result};
use crate::rng::{self, Rng, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthHyperParams {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    pub noise: f64,
}

impl Default for SynthHyperParams {
    fn default() -> Self {
        SynthHyperParams { height: 32, width: 32, bands: 8, classes: 4, noise: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSegParams {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub rectangles: usize,
    /// Half-width of the uniform per-channel pixel noise, in 0..255 units.
    pub noise: u8,
}

impl Default for SynthSegParams {
    fn default() -> Self {
        SynthSegParams { height: 64, width: 64, classes: 4, rectangles: 6, noise: 12 }
    }
}

/// A generated dataset: the in-memory data plus the files written for it.
#[derive(Debug, Clone)]
pub struct SynthOutput<T> {
    pub data: T,
    pub prototypes: Vec<Vec<f64>>,
    pub palette: Palette,
    pub files: Vec<PathBuf>,
}

const BALANCE_TOLERANCE: f64 = 0.2;
const MAX_LAYOUT_TRIES: usize = 256;

fn voronoi(h: usize, w: usize, seeds: &[(f64, f64)]) -> Vec<i32> {
    let mut labels = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut best = (f64::INFINITY, 0);
            for (k, &(sy, sx)) in seeds.iter().enumerate() {
                let d = (y - sy).powi(2) + (x - sx).powi(2);
                if d < best.0 {
                    best = (d, k);
                }
            }
            labels.push(best.1 as i32 + 1);
        }
    }
    labels
}

fn imbalance(labels: &[i32], k: usize) -> f64 {
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l as usize - 1] += 1;
    }
    let mean = labels.len() as f64 / k as f64;
    counts.iter().map(|&c| (c as f64 - mean).abs() / mean).fold(0.0, f64::max)
}

/// Voronoi layout whose cells all hold within ±20% of the mean cell size, or
/// the most balanced layout found.
fn balanced_voronoi(h: usize, w: usize, k: usize, rng: &mut Rng) -> Vec<i32> {
    let mut best: Option<(f64, Vec<i32>)> = None;
    for _ in 0..MAX_LAYOUT_TRIES {
        let seeds: Vec<(f64, f64)> =
            (0..k).map(|_| (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64))).collect();
        let labels = voronoi(h, w, &seeds);
        let score = imbalance(&labels, k);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, labels));
        }
        if score <= BALANCE_TOLERANCE {
            break;
        }
    }
    best.map(|(_, l)| l).unwrap_or_default()
}

/// Smooth curve: a low-order sine series over normalised band position.
fn smooth_curve(p: usize, rng: &mut Rng) -> Vec<f64> {
    let offset = rng.random_range(-0.5..0.5);
    let terms: Vec<(f64, f64)> = (1..=3).map(|_| (rng.random_range(-0.6..0.6), rng.random_range(0.0..2.0 * PI))).collect();
    (0..p)
        .map(|b| {
            let t = if p > 1 { b as f64 / (p - 1) as f64 } else { 0.0 };
            offset + terms.iter().enumerate().map(|(m, (a, phi))| a * (PI * (m + 1) as f64 * t + phi).sin()).sum::<f64>()
        })
        .collect()
}

fn rms_distance(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn prototypes(p: usize, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut tries = 0;
    while out.len() < k {
        let curve = smooth_curve(p, rng);
        tries += 1;
        if tries > 1000 || out.iter().all(|o| rms_distance(o, &curve) >= 0.3) {
            out.push(curve);
        }
    }
    out
}

/// Voronoi label map with one smooth prototype spectrum per class plus
/// Gaussian noise. Band values are rounded to f32 so the in-memory cube
/// equals the one read back from disk.
pub fn generate_hyper(params: &SynthHyperParams, seed: u64) -> Result<(HyperCube, Vec<Vec<f64>>)> {
    let SynthHyperParams { height: h, width: w, bands: p, classes: k, noise } = *params;
    if h == 0 || w == 0 || p == 0 || k < 2 || !(noise >= 0.0 && noise.is_finite()) {
        return Err(config_err!("invalid synthetic cube parameters {params:?}"));
    }
    let mut rng = rng::stream(seed, Stream::Synth);
    let labels = balanced_voronoi(h, w, k, &mut rng);
    let protos = prototypes(p, k, &mut rng);
    let normal = Normal::new(0.0, noise).map_err(|e| config_err!("noise: {e}"))?;
    let mut bands = vec![0.0; p * h * w];
    for (i, &l) in labels.iter().enumerate() {
        for b in 0..p {
            let v = protos[l as usize - 1][b] + normal.sample(&mut rng);
            bands[b * h * w + i] = v as f32 as f64;
        }
    }
    let names = (1..=k).map(|c| format!("class_{c}")).collect();
    Ok((HyperCube::new(Tensor::new(&[p, h, w], bands)?, labels, names)?, protos))
}

/// Generates the hyperspectral cube and writes `bands.ffpt`, `labels.ffpt`,
/// `classes.txt`, `palette.txt` and a `labels.ppm` preview into `out`.
pub fn synth_hyper(params: &SynthHyperParams, seed: u64, out: &Path) -> Result<SynthOutput<HyperCube>> {
    let (cube, prototypes) = generate_hyper(params, seed)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let files: Vec<PathBuf> = ["bands.ffpt", "labels.ffpt", "classes.txt", "palette.txt", "labels.ppm"].iter().map(|f| out.join(f)).collect();
    save_cube(&cube, &files[0], &files[1], &files[2], false)?;
    let palette = Palette::generated(cube.num_classes());
    palette.save(&files[3])?;
    write_ppm(&files[4], cube.width(), cube.height(), &palette.render(&cube.labels))?;
    Ok(SynthOutput { data: cube, prototypes, palette, files })
}

fn appearance_colors(k: usize, rng: &mut Rng) -> Vec<Rgb> {
    let mut out: Vec<Rgb> = Vec::with_capacity(k);
    let mut tries = 0;
    while out.len() < k {
        let c = [rng.random_range(20..236u8), rng.random_range(20..236u8), rng.random_range(20..236u8)];
        tries += 1;
        let far = out.iter().all(|o| o.iter().zip(&c).map(|(&a, &b)| (a as i32 - b as i32).abs()).sum::<i32>() >= 120);
        if far || tries > 1000 {
            out.push(c);
        }
    }
    out
}


/// Background class 1 overlaid with axis-aligned rectangles of classes
/// 2..=K; each class has its own appearance colour plus uniform noise.
pub fn generate_seg(params: &SynthSegParams, seed: u64) -> Result<(SegSample, Vec<u8>)> {
    let SynthSegParams { height: h, width: w, classes: k, rectangles, noise } = *params;
    if h < 4 || w < 4 || k < 2 || rectangles == 0 {
        return Err(config_err!("invalid synthetic segmentation parameters {params:?}"));
    }
    let mut rng = rng::stream(seed, Stream::Synth);
    let colors = appearance_colors(k, &mut rng);
    let mut labels = vec![1i32; h * w];
    for i in 0..rectangles {
        let class = 2 + (i % (k - 1)) as i32;
        let rh = rng.random_range(h / 8..=h / 2).max(2);
        let rw = rng.random_range(w / 8..=w / 2).max(2);
        let top = rng.random_range(0..=h - rh);
        let left = rng.random_range(0..=w - rw);
        for r in top..top + rh {
            labels[r * w + left..r * w + left + rw].fill(class);
        }
    }
    let mut rgb = Vec::with_capacity(h * w * 3);
    for &l in &labels {
        for &base in &colors[l as usize - 1] {
            let jitter = if noise == 0 { 0 } else { rng.random_range(-(noise as i32)..=noise as i32) };
            rgb.push((base as i32 + jitter).clamp(0, 255) as u8);
        }
    }
    let area = h * w;
    let image = Tensor::from_fn(&[3, h, w], |i| rgb[(i % area) * 3 + i / area] as f64 / 255.0);
    Ok((SegSample::new(image, labels)?, rgb))
}

/// Generates one segmentation pair and writes `image.ppm`, `labels.ppm`,
/// `palette.txt` and `classes.txt` into `out`.
pub fn synth_seg(params: &SynthSegParams, seed: u64, out: &Path) -> Result<SynthOutput<SegSample>> {
    let (sample, rgb) = generate_seg(params, seed)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let files: Vec<PathBuf> = ["image.ppm", "labels.ppm", "palette.txt", "classes.txt"].iter().map(|f| out.join(f)).collect();
    let mut palette = Palette::generated(params.classes);
    palette.entries.retain(|(_, c)| *c > 0);
    write_ppm(&files[0], params.width, params.height, &rgb)?;
    write_ppm(&files[1], params.width, params.height, &palette.render(&sample.labels))?;
    palette.save(&files[2])?;
    let names: String = (1..=params.classes).map(|c| format!("class_{c}\n")).collect();
    std::fs::write(&files[3], names).map_err(|e| Error::io(&files[3], e))?;
    Ok(SynthOutput { data: sample, prototypes: Vec::new(), palette, files })
}
