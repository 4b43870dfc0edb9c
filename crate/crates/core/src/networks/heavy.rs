use crate::attn::{AdaptiveAspp, MuAttFusion, ResConv, SameLayerMode};
use crate::autograd::Var;
use crate::error::{config_err, Result};
use crate::nn::{Conv2d, Ctx, ParamStore};
use crate::rng::Rng;
use crate::tensor::kernels::{ConvGeometry, ResizeMode};

use super::backbone::{ResidualBackbone, RESIDUAL_TAP_STRIDES};
use super::config::NetworkConfig;

/// Three-level segmentation network.
///
/// Level one refines the four backbone taps into `x1..x4` and runs ASPP on the
/// backbone output for `x5`. Level two fuses `x1..x4` at the resolutions of
/// `x2` and `x3` into `x6` and `x7`. Level three fuses `x5, x6, x7` at the
/// resolution of `x6`, projects to class logits and upsamples to the input.
#[derive(Debug, Clone)]
pub struct HeavyFfpNet {
    pub config: NetworkConfig,
    backbone: ResidualBackbone,
    level1: Vec<ResConv>,
    aspp: Option<AdaptiveAspp>,
    x6: (MuAttFusion, ResConv),
    x7: (MuAttFusion, ResConv),
    top: MuAttFusion,
    head: Conv2d,
}

impl HeavyFfpNet {
    pub fn new(store: &mut ParamStore, config: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        config.validate_segmenter()?;
        let fw = config.fusion_width;
        let pyr = &config.region_pyramid;
        let backbone = ResidualBackbone::new(store, "backbone", &config.backbone, rng)?;
        let level1 = (0..4)
            .map(|i| ResConv::new(store, &format!("x{}.resconv", i + 1), backbone.tap_channels[i], fw, rng))
            .collect();
        let aspp = match &config.aspp {
            Some(a) => Some(AdaptiveAspp::new(store, "x5.aspp", backbone.tap_channels[4], fw, fw, a, rng)?),
            None => None,
        };
        let level1_scales = &RESIDUAL_TAP_STRIDES[..4];
        let mut level2 = |name: &str, current: usize, rng: &mut Rng| -> Result<(MuAttFusion, ResConv)> {
            let fusion = MuAttFusion::new(store, &format!("{name}.fusion"), &[fw; 4], level1_scales, current, SameLayerMode::Repyatt, pyr, rng)?;
            Ok((fusion, ResConv::new(store, &format!("{name}.resconv"), fw, fw, rng)))
        };
        let x6 = level2("x6", 1, rng)?;
        let x7 = level2("x7", 2, rng)?;
        let (channels, scales): (Vec<usize>, Vec<usize>) = if aspp.is_some() { (vec![fw; 3], vec![16, 4, 8]) } else { (vec![fw; 2], vec![4, 8]) };
        let current = channels.len() - 2;
        let top = MuAttFusion::new(store, "top.fusion", &channels, &scales, current, SameLayerMode::Repyatt, pyr, rng)?;
        let head = Conv2d::new(store, "head", fw, config.num_classes, 1, ConvGeometry::new(1, 0, 1), true, rng);
        Ok(HeavyFfpNet { config: config.clone(), backbone, level1, aspp, x6, x7, top, head })
    }

    /// Logits `N×K×H×W`.
    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let (_, c, h, w) = x.value().dims4()?;
        if c != self.config.backbone.input_channels {
            return Err(config_err!("segmenter expects {} input channels, got {c}", self.config.backbone.input_channels));
        }
        if h % 16 != 0 || w % 16 != 0 {
            return Err(config_err!("segmenter input extents must be divisible by 16, got {h}x{w}"));
        }
        let taps = self.backbone.forward(cx, x)?;
        let xs = self.level1.iter().zip(&taps).map(|(r, t)| r.forward(cx, *t)).collect::<Result<Vec<_>>>()?;
        let x6 = self.x6.1.forward(cx, self.x6.0.forward(cx, &xs)?)?;
        let x7 = self.x7.1.forward(cx, self.x7.0.forward(cx, &xs)?)?;
        let fused = match &self.aspp {
            Some(aspp) => {
                let x5 = aspp.forward(cx, taps[4])?;
                self.top.forward(cx, &[x5, x6, x7])?
            }
            None => self.top.forward(cx, &[x6, x7])?,
        };
        self.head.forward(cx, fused)?.resize(h, w, ResizeMode::Bilinear)
    }
}
