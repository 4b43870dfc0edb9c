use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::networks::NetworkConfig;
use crate::training::{LossConfig, LossKind, OptimizerConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegPairPaths {
    pub image: PathBuf,
    pub labels: PathBuf,
}

/// Dataset files. Classification reads `bands`, `labels` and `classes`;
/// segmentation reads `images` (and `eval_images`) with a `palette`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bands: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub palette: Option<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<SegPairPaths>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub eval_images: Vec<SegPairPaths>,
}

impl DataPaths {
    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.bands, &mut self.labels, &mut self.classes, &mut self.palette].into_iter().flatten() {
            join(p);
        }
        for pair in self.images.iter_mut().chain(self.eval_images.iter_mut()) {
            join(&mut pair.image);
            join(&mut pair.labels);
        }
    }
}

/// One training, evaluation or prediction run. Unset fields take task
/// defaults in [`RunConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub data: DataPaths,
    #[serde(default)]
    pub full_width: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkConfig>,
    /// Classification patch side `d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_size: Option<usize>,
    /// Per-class training-sample threshold `T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossConfig>,
    /// Boundary erosion radius for evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erode: Option<usize>,
    /// Evaluate every this many epochs; 0 evaluates only before and after
    /// training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_PATCH_SIZE: usize = 9;
pub const DEFAULT_THRESHOLD: usize = 200;
pub const DEFAULT_SEG_ERODE: usize = 3;

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config file; relative data and output paths are taken relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Json(j) => config_err!("{}: {j}", path.display()),
            e => e,
        })?;
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let dir = std::path::absolute(dir).map_err(|e| Error::io(dir, e))?;
        cfg.data.rebase(&dir);
        if let Some(out) = cfg.out.as_mut().filter(|o| o.is_relative()) {
            *out = dir.join(&*out);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fills every unset field with the task default. `bands` is the input
    /// channel count of classification data.
    pub fn resolve(&mut self, bands: usize, num_classes: usize) {
        let full = self.full_width;
        match self.task {
            Task::Classify => {
                let d = *self.patch_size.get_or_insert(DEFAULT_PATCH_SIZE);
                self.threshold.get_or_insert(DEFAULT_THRESHOLD);
                self.augment.get_or_insert(true);
                self.epochs.get_or_insert(200);
                self.batch_size.get_or_insert(24);
                self.optimizer.get_or_insert_with(|| OptimizerConfig::adam(0.001));
                self.loss.get_or_insert_with(LossConfig::default);
                self.erode.get_or_insert(0);
                self.network.get_or_insert_with(|| NetworkConfig::classifier(bands, num_classes, d, full));
            }
            Task::Segment => {
                self.augment.get_or_insert(false);
                self.epochs.get_or_insert(10);
                self.batch_size.get_or_insert(4);
                self.optimizer.get_or_insert_with(|| OptimizerConfig::sgd(2.5e-4, 0.9, 5e-4));
                self.loss.get_or_insert_with(|| LossConfig { kind: LossKind::Ba, ..LossConfig::default() });
                self.erode.get_or_insert(DEFAULT_SEG_ERODE);
                self.network.get_or_insert_with(|| NetworkConfig::segmenter(num_classes, full));
            }
        }
        self.seed.get_or_insert(DEFAULT_SEED);
        self.eval_every.get_or_insert(0);
        self.out.get_or_insert_with(|| PathBuf::from(match self.task {
            Task::Classify => "runs/classify",
            Task::Segment => "runs/segment",
        }));
    }

    /// Checks a resolved config against the loaded data.
    pub fn validate(&self, bands: usize, num_classes: usize) -> Result<()> {
        let net = self.network.as_ref().ok_or_else(|| config_err!("network is unresolved"))?;
        let missing = |field: &str| config_err!("data.{field} is required for this task");
        match self.task {
            Task::Classify => {
                self.data.bands.as_ref().ok_or_else(|| missing("bands"))?;
                self.data.labels.as_ref().ok_or_else(|| missing("labels"))?;
                self.data.classes.as_ref().ok_or_else(|| missing("classes"))?;
                if !self.data.images.is_empty() || !self.data.eval_images.is_empty() {
                    return Err(config_err!("data.images is only used by the segment task"));
                }
                net.validate_classifier()?;
                let d = self.patch_size.unwrap_or(0);
                if net.patch_size != d {
                    return Err(config_err!("network.patch_size {} differs from patch_size {d}", net.patch_size));
                }
                if self.threshold == Some(0) {
                    return Err(config_err!("threshold must be positive"));
                }
                if net.backbone.input_channels != bands {
                    return Err(config_err!("network.backbone.input_channels {} differs from the cube's {bands} bands", net.backbone.input_channels));
                }
            }
            Task::Segment => {
                if self.data.images.is_empty() {
                    return Err(missing("images"));
                }
                self.data.palette.as_ref().ok_or_else(|| missing("palette"))?;
                if self.patch_size.is_some() || self.threshold.is_some() {
                    return Err(config_err!("patch_size and threshold are only used by the classify task"));
                }
                if self.augment == Some(true) {
                    return Err(config_err!("augment is only supported by the classify task"));
                }
                net.validate_segmenter()?;
                if net.backbone.input_channels != 3 {
                    return Err(config_err!("network.backbone.input_channels must be 3 for segmentation"));
                }
            }
        }
        if net.num_classes != num_classes {
            return Err(config_err!("network.num_classes {} differs from the dataset's {num_classes} classes", net.num_classes));
        }
        self.train_config()?.validate()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let unresolved = || config_err!("config is unresolved");
        Ok(TrainConfig {
            epochs: self.epochs.ok_or_else(unresolved)?,
            batch_size: self.batch_size.ok_or_else(unresolved)?,
            seed: self.seed.ok_or_else(unresolved)?,
            loss: self.loss.clone().ok_or_else(unresolved)?,
            optimizer: self.optimizer.clone().ok_or_else(unresolved)?,
        })
    }
}
