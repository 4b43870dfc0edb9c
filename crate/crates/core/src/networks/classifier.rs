use crate::attn::{MuAttFusion, ResConv, SameLayerMode};
use crate::autograd::{concat, Var};
use crate::error::{config_err, Result};
use crate::nn::{ConvBnRelu, Ctx, Linear, ParamStore};
use crate::rng::Rng;
use crate::tensor::kernels::ConvGeometry;

use super::backbone::VggBackbone;
use super::config::NetworkConfig;

/// Fusion inputs are ordered shallow to deep.
const DEPTH_SCALES: [usize; 3] = [1, 2, 3];

fn check_patch(x: &Var<'_>, cfg: &NetworkConfig) -> Result<()> {
    let (_, c, h, w) = x.value().dims4()?;
    let (p, d) = (cfg.backbone.input_channels, cfg.patch_size);
    if (c, h, w) != (p, d, d) {
        return Err(config_err!("classifier expects {p}x{d}x{d} patches, got {c}x{h}x{w}"));
    }
    Ok(())
}

/// VGG taps refined by ResConv, fused at the middle tap without same-layer
/// attention, refined again and flattened into a feature vector.
#[derive(Debug, Clone)]
pub struct LightSpatialFfp {
    backbone: VggBackbone,
    refine: Vec<ResConv>,
    fusion: MuAttFusion,
    post: ResConv,
    fc: Linear,
}

impl LightSpatialFfp {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        let fw = cfg.fusion_width;
        let backbone = VggBackbone::new(store, &format!("{name}.backbone"), &cfg.backbone, rng)?;
        let refine = (0..3)
            .map(|i| ResConv::new(store, &format!("{name}.x{}.resconv", i + 1), backbone.tap_channels[i], fw, rng))
            .collect();
        let fusion = MuAttFusion::new(store, &format!("{name}.fusion"), &[fw; 3], &DEPTH_SCALES, 1, SameLayerMode::Direct, &cfg.region_pyramid, rng)?;
        let post = ResConv::new(store, &format!("{name}.resconv"), fw, fw, rng);
        let e = VggBackbone::tap_extents(cfg.patch_size)[1];
        let fc = Linear::new(store, &format!("{name}.fc"), fw * e * e, cfg.feature_width, rng);
        Ok(LightSpatialFfp { backbone, refine, fusion, post, fc })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let taps = self.backbone.forward(cx, x)?;
        let xs = self.refine.iter().zip(&taps).map(|(r, t)| r.forward(cx, *t)).collect::<Result<Vec<_>>>()?;
        let fused = self.post.forward(cx, self.fusion.forward(cx, &xs)?)?;
        Ok(self.fc.forward(cx, fused.flatten()?)?.relu())
    }
}

/// Three conv stages (3×3 then 1×1) at constant resolution with decreasing
/// widths, fused at the narrowest stage and flattened into a feature vector.
#[derive(Debug, Clone)]
pub struct SpectralFfp {
    stages: Vec<(ConvBnRelu, ConvBnRelu)>,
    fusion: MuAttFusion,
    fc: Linear,
}

impl SpectralFfp {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        let mut cin = cfg.backbone.input_channels;
        let mut stages = Vec::new();
        for (i, &w) in cfg.spectral_widths.iter().enumerate() {
            let n = format!("{name}.x{}", i + 1);
            stages.push((
                ConvBnRelu::new(store, &format!("{n}.conv3"), cin, w, 3, ConvGeometry::same(3, 1), true, rng),
                ConvBnRelu::new(store, &format!("{n}.conv1"), w, w, 1, ConvGeometry::new(1, 0, 1), true, rng),
            ));
            cin = w;
        }
        let fusion = MuAttFusion::new(store, &format!("{name}.fusion"), &cfg.spectral_widths, &DEPTH_SCALES, 2, SameLayerMode::Direct, &cfg.region_pyramid, rng)?;
        let d = cfg.patch_size;
        let fc = Linear::new(store, &format!("{name}.fc"), cfg.spectral_widths[2] * d * d, cfg.feature_width, rng);
        Ok(SpectralFfp { stages, fusion, fc })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        let mut xs = Vec::with_capacity(3);
        for (a, b) in &self.stages {
            h = b.forward(cx, a.forward(cx, h)?)?;
            xs.push(h);
        }
        let fused = self.fusion.forward(cx, &xs)?;
        Ok(self.fc.forward(cx, fused.flatten()?)?.relu())
    }
}

/// Spatial and spectral feature vectors concatenated, then a hidden layer with
/// dropout and a linear classifier.
#[derive(Debug, Clone)]
pub struct SpatialSpectralNet {
    pub config: NetworkConfig,
    pub spatial: LightSpatialFfp,
    pub spectral: SpectralFfp,
    hidden: Linear,
    out: Linear,
}

impl SpatialSpectralNet {
    pub fn new(store: &mut ParamStore, config: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        config.validate_classifier()?;
        let spatial = LightSpatialFfp::new(store, "spatial", config, rng)?;
        let spectral = SpectralFfp::new(store, "spectral", config, rng)?;
        let hidden = Linear::new(store, "merge.hidden", 2 * config.feature_width, config.fc_width, rng);
        let out = Linear::new(store, "merge.out", config.fc_width, config.num_classes, rng);
        Ok(SpatialSpectralNet { config: config.clone(), spatial, spectral, hidden, out })
    }

    /// Logits `N×K`.
    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        check_patch(&x, &self.config)?;
        let feats = concat(&[self.spatial.forward(cx, x)?, self.spectral.forward(cx, x)?], 1)?;
        let h = self.hidden.forward(cx, feats)?.relu();
        let h = h.dropout(self.config.dropout_p, cx.training, &mut cx.dropout_rng())?;
        self.out.forward(cx, h)
    }
}
