use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ffpt::{Array, DType};
use crate::tensor::Tensor;

/// A `p×H×W` band stack with an `H×W` label map (0 unlabeled, 1..K classes).
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    pub bands: Tensor,
    pub labels: Vec<i32>,
    pub class_names: Vec<String>,
}

impl HyperCube {
    pub fn new(bands: Tensor, labels: Vec<i32>, class_names: Vec<String>) -> Result<Self> {
        let cube = HyperCube { bands, labels, class_names };
        cube.validate()?;
        Ok(cube)
    }

    pub fn num_bands(&self) -> usize {
        self.bands.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.bands.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.bands.shape()[2]
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.bands.shape();
        if s.len() != 3 {
            return Err(Error::Validation(format!("band stack must be p×H×W, got {s:?}")));
        }
        if self.labels.len() != s[1] * s[2] {
            return Err(Error::Validation(format!("label map has {} entries, bands are {}×{}", self.labels.len(), s[1], s[2])));
        }
        let k = self.class_names.len() as i32;
        if let Some(bad) = self.labels.iter().find(|&&l| l < 0 || l > k) {
            return Err(Error::Validation(format!("label {bad} outside 0..={k}")));
        }
        Ok(())
    }

    /// Pixel counts for classes 1..=K.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            if l > 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }

    fn with_bands(&self, bands: Vec<f64>) -> Result<Self> {
        Ok(HyperCube { bands: Tensor::new(self.bands.shape(), bands)?, labels: self.labels.clone(), class_names: self.class_names.clone() })
    }
}

/// One class name per line; line `i` names class `i`.
pub fn read_class_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn load_cube(bands_path: &Path, labels_path: &Path, names_path: &Path) -> Result<HyperCube> {
    let bands = Array::read(bands_path)?;
    if !matches!(bands.payload.dtype(), DType::F32 | DType::F64) {
        return Err(Error::Parse(format!("{}: band data must be f32 or f64, got {:?}", bands_path.display(), bands.payload.dtype())));
    }
    if bands.shape.len() != 3 {
        return Err(Error::Parse(format!("{}: band data must have rank 3, got {:?}", bands_path.display(), bands.shape)));
    }
    let labels = Array::read(labels_path)?;
    if !matches!(labels.payload.dtype(), DType::I32 | DType::U8) {
        return Err(Error::Parse(format!("{}: labels must be i32 or u8, got {:?}", labels_path.display(), labels.payload.dtype())));
    }
    if labels.shape != bands.shape[1..] {
        return Err(Error::Parse(format!(
            "{}: label extents {:?} do not match band extents {:?}",
            labels_path.display(),
            labels.shape,
            &bands.shape[1..]
        )));
    }
    HyperCube::new(bands.to_tensor()?, labels.to_labels()?, read_class_names(names_path)?)
}

/// Writes bands (f32 or f64), labels (i32) and class names.
pub fn save_cube(cube: &HyperCube, bands_path: &Path, labels_path: &Path, names_path: &Path, f64_bands: bool) -> Result<()> {
    let bands = if f64_bands { Array::from_tensor(&cube.bands) } else { Array::from_tensor_f32(&cube.bands) };
    bands.write(bands_path)?;
    Array::from_labels(&cube.bands.shape()[1..], &cube.labels)?.write(labels_path)?;
    let names = cube.class_names.join("\n") + "\n";
    fs::write(names_path, names).map_err(|e| Error::io(names_path, e))
}

/// Subtracts the global mean and divides by the global population standard
/// deviation.
pub fn normalize_global(cube: &HyperCube) -> Result<HyperCube> {
    let n = cube.bands.numel() as f64;
    let mean = cube.bands.data().iter().sum::<f64>() / n;
    let var = cube.bands.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return Err(Error::DegenerateInput("cube has zero variance; global normalization is undefined".into()));
    }
    cube.with_bands(cube.bands.data().iter().map(|v| (v - mean) / std).collect())
}

/// Subtracts each band's spatial mean.
pub fn normalize_band_mean(cube: &HyperCube) -> Result<HyperCube> {
    let area = cube.height() * cube.width();
    let mut data = cube.bands.data().to_vec();
    for band in data.chunks_mut(area) {
        let mean = band.iter().sum::<f64>() / area as f64;
        band.iter_mut().for_each(|v| *v -= mean);
    }
    cube.with_bands(data)
}
