use serde::{Deserialize, Serialize};

use crate::attn::{AsppConfig, RegionPyramidConfig};
use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Residual,
    Vgg,
}

/// Residual: four bottleneck stages after a 7×7 stem, `stage_widths` are the
/// stage output widths. Vgg: five conv blocks, `stage_block_counts` convs each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub stage_block_counts: Vec<usize>,
    pub stage_widths: Vec<usize>,
    /// Residual stem width; unused by the vgg kind.
    #[serde(default)]
    pub stem_width: usize,
    pub input_channels: usize,
}

impl BackboneConfig {
    pub fn residual(input_channels: usize, full: bool) -> Self {
        let (blocks, widths, stem) =
            if full { (vec![3, 4, 23, 3], vec![256, 512, 1024, 2048], 64) } else { (vec![1, 1, 1, 1], vec![64, 128, 256, 512], 16) };
        BackboneConfig { kind: BackboneKind::Residual, stage_block_counts: blocks, stage_widths: widths, stem_width: stem, input_channels }
    }

    pub fn vgg(input_channels: usize, full: bool) -> Self {
        let widths = if full { vec![64, 128, 256, 512, 512] } else { vec![16, 32, 64, 128, 128] };
        BackboneConfig { kind: BackboneKind::Vgg, stage_block_counts: vec![2, 2, 3, 3, 3], stage_widths: widths, stem_width: 0, input_channels }
    }

    pub fn validate(&self) -> Result<()> {
        let stages = match self.kind {
            BackboneKind::Residual => 4,
            BackboneKind::Vgg => 5,
        };
        if self.stage_block_counts.len() != stages || self.stage_widths.len() != stages {
            return Err(config_err!(
                "backbone.stage_block_counts and backbone.stage_widths need {stages} entries for the {:?} kind",
                self.kind
            ));
        }
        if self.stage_block_counts.contains(&0) || self.stage_widths.contains(&0) || self.input_channels == 0 {
            return Err(config_err!("backbone counts, widths and input_channels must be positive"));
        }
        if self.kind == BackboneKind::Residual {
            if self.stem_width == 0 {
                return Err(config_err!("backbone.stem_width must be positive for the residual kind"));
            }
            if let Some(w) = self.stage_widths.iter().find(|&&w| w < 4) {
                return Err(config_err!("backbone.stage_widths entry {w} leaves no bottleneck width"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub backbone: BackboneConfig,
    pub fusion_width: usize,
    #[serde(default)]
    pub region_pyramid: RegionPyramidConfig,
    /// `null` drops the ASPP branch from the segmenter.
    #[serde(default = "default_aspp")]
    pub aspp: Option<AsppConfig>,
    pub num_classes: usize,
    /// Classifier patch side `d`.
    #[serde(default)]
    pub patch_size: usize,
    /// Width of the spatial and spectral feature vectors.
    #[serde(default = "default_fc")]
    pub feature_width: usize,
    /// Hidden width of the merge head.
    #[serde(default = "default_fc")]
    pub fc_width: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    #[serde(default = "default_spectral")]
    pub spectral_widths: [usize; 3],
}

fn default_aspp() -> Option<AsppConfig> {
    Some(AsppConfig::default())
}
fn default_fc() -> usize {
    256
}
fn default_dropout() -> f64 {
    0.5
}
fn default_spectral() -> [usize; 3] {
    [64, 32, 16]
}

impl NetworkConfig {
    /// Three-level segmenter over RGB-type input.
    pub fn segmenter(num_classes: usize, full: bool) -> Self {
        NetworkConfig {
            backbone: BackboneConfig::residual(3, full),
            fusion_width: if full { 256 } else { 64 },
            region_pyramid: RegionPyramidConfig::default(),
            aspp: default_aspp(),
            num_classes,
            patch_size: 0,
            feature_width: default_fc(),
            fc_width: default_fc(),
            dropout_p: default_dropout(),
            spectral_widths: default_spectral(),
        }
    }

    /// Spatial–spectral classifier over `bands×d×d` patches.
    pub fn classifier(bands: usize, num_classes: usize, patch_size: usize, full: bool) -> Self {
        NetworkConfig {
            backbone: BackboneConfig::vgg(bands, full),
            fusion_width: if full { 256 } else { 64 },
            patch_size,
            ..Self::segmenter(num_classes, full)
        }
    }

    fn validate_common(&self) -> Result<()> {
        self.backbone.validate()?;
        self.region_pyramid.validate()?;
        if self.num_classes < 2 {
            return Err(config_err!("network.num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.fusion_width == 0 {
            return Err(config_err!("network.fusion_width must be positive"));
        }
        Ok(())
    }

    pub fn validate_segmenter(&self) -> Result<()> {
        self.validate_common()?;
        if self.backbone.kind != BackboneKind::Residual {
            return Err(config_err!("network.backbone.kind must be residual for segmentation"));
        }
        Ok(())
    }

    pub fn validate_classifier(&self) -> Result<()> {
        self.validate_common()?;
        if self.backbone.kind != BackboneKind::Vgg {
            return Err(config_err!("network.backbone.kind must be vgg for classification"));
        }
        if self.patch_size < 5 || self.patch_size % 2 == 0 {
            return Err(config_err!("network.patch_size must be odd and at least 5, got {}", self.patch_size));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(config_err!("network.dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if self.feature_width == 0 || self.fc_width == 0 || self.spectral_widths.contains(&0) {
            return Err(config_err!("network feature, fc and spectral widths must be positive"));
        }
        Ok(())
    }
}
