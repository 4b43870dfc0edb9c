use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{config_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::training::{Batch, TrainSource};

pub type Rgb = [u8; 3];

/// Reads a binary (P6) portable pixmap with maxval 255.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let err = |m: &str| Error::Parse(format!("{}: {m}", path.display()));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(err(&format!("expected magic P6, found {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| err(&format!("bad header field {s:?}")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(err(&format!("only maxval 255 is supported, found {maxval}")));
    }
    pos += 1;
    let need = w * h * 3;
    let have = bytes.len().saturating_sub(pos);
    if have < need {
        return Err(err(&format!("expected {need} pixel bytes, found {have}")));
    }
    Ok((w, h, bytes[pos..pos + need].to_vec()))
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Usage(format!("{}×{} image needs {} bytes, got {}", width, height, width * height * 3, rgb.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Colour ↔ class table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Palette {
    pub entries: Vec<(Rgb, i32)>,
}

impl Palette {
    /// Parses lines of `R G B class_id`; blank lines and `#` comments are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Parse(format!("palette line {}: expected `R G B class_id`, got {line:?}", i + 1));
            if parts.len() != 4 {
                return Err(bad());
            }
            let c = |s: &str| s.parse::<u8>().map_err(|_| bad());
            let class = parts[3].parse::<i32>().map_err(|_| bad())?;
            if class < 0 {
                return Err(bad());
            }
            entries.push(([c(parts[0])?, c(parts[1])?, c(parts[2])?], class));
        }
        Ok(Palette { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|([r, g, b], c)| format!("{r} {g} {b} {c}\n")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Black for unlabeled, then well separated colours for classes 1..=k.
    pub fn generated(k: usize) -> Self {
        const BASE: [Rgb; 12] = [
            [230, 25, 75],
            [60, 180, 75],
            [255, 225, 25],
            [0, 130, 200],
            [245, 130, 48],
            [145, 30, 180],
            [70, 240, 240],
            [240, 50, 230],
            [210, 245, 60],
            [250, 190, 212],
            [0, 128, 128],
            [170, 110, 40],
        ];
        let mut entries = vec![([0, 0, 0], 0)];
        for c in 0..k {
            let [r, g, b] = BASE[c % BASE.len()];
            let shade = (c / BASE.len()) as u8;
            let f = |v: u8| v.saturating_sub(shade.saturating_mul(37));
            entries.push(([f(r), f(g), f(b)], c as i32 + 1));
        }
        Palette { entries }
    }

    pub fn color_of(&self, class: i32) -> Option<Rgb> {
        self.entries.iter().find(|(_, c)| *c == class).map(|(rgb, _)| *rgb)
    }

    pub fn class_of(&self, rgb: Rgb) -> Option<i32> {
        self.entries.iter().find(|(c, _)| *c == rgb).map(|(_, k)| *k)
    }

    /// Colours a label map; classes missing from the palette render black.
    pub fn render(&self, labels: &[i32]) -> Vec<u8> {
        let lut: HashMap<i32, Rgb> = self.entries.iter().map(|(rgb, c)| (*c, *rgb)).collect();
        labels.iter().flat_map(|l| lut.get(l).copied().unwrap_or([0, 0, 0])).collect()
    }
}

/// An RGB (or IRRG) image in [0, 1] with its label map.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub image: Tensor,
    pub labels: Vec<i32>,
}

impl SegSample {
    pub fn new(image: Tensor, labels: Vec<i32>) -> Result<Self> {
        match *image.shape() {
            [3, h, w] if h * w == labels.len() => Ok(SegSample { image, labels }),
            ref s => Err(Error::Validation(format!("image {s:?} does not match {} labels", labels.len()))),
        }
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

pub fn load_seg_pair(image_ppm: &Path, label_ppm: &Path, palette_path: &Path) -> Result<SegSample> {
    let (w, h, rgb) = read_ppm(image_ppm)?;
    let (lw, lh, lrgb) = read_ppm(label_ppm)?;
    if (lw, lh) != (w, h) {
        return Err(Error::Parse(format!(
            "{}: label extent {lw}×{lh} does not match image extent {w}×{h}",
            label_ppm.display()
        )));
    }
    let palette = Palette::load(palette_path)?;
    let lut: HashMap<Rgb, i32> = palette.entries.iter().copied().collect();
    let labels = lrgb
        .chunks_exact(3)
        .map(|px| {
            let key = [px[0], px[1], px[2]];
            lut.get(&key).copied().ok_or_else(|| {
                Error::Parse(format!("{}: colour ({}, {}, {}) is not in the palette", label_ppm.display(), px[0], px[1], px[2]))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let area = w * h;
    let image = Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / area, i % area);
        rgb[p * 3 + c] as f64 / 255.0
    });
    SegSample::new(image, labels)
}

/// Whole-image batches for segmentation training.
#[derive(Debug, Clone)]
pub struct SegSource {
    pub samples: Vec<SegSample>,
}

impl TrainSource for SegSource {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn batch(&self, indices: &[usize], _rng: &mut Rng) -> Result<Batch> {
        let images: Vec<Tensor> = indices.iter().map(|&i| self.samples[i].image.clone()).collect();
        let inputs = Tensor::stack(&images).map_err(|_| config_err!("segmentation samples in one batch must share extents"))?;
        let labels = indices.iter().flat_map(|&i| self.samples[i].labels.iter().copied()).collect();
        Ok(Batch { inputs, labels })
    }
}
