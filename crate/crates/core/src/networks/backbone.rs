use crate::autograd::Var;
use crate::error::Result;
use crate::nn::{ConvBnRelu, Ctx, ParamStore};
use crate::rng::Rng;
use crate::tensor::kernels::ConvGeometry;

use super::config::{BackboneConfig, BackboneKind};

/// 1×1 reduce, 3×3 (strided or dilated), 1×1 expand, plus a projected
/// shortcut when the shape changes.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    reduce: ConvBnRelu,
    spatial: ConvBnRelu,
    expand: ConvBnRelu,
    shortcut: Option<ConvBnRelu>,
}

impl Bottleneck {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize, dilation: usize, rng: &mut Rng) -> Self {
        let mid = cout / 4;
        let shortcut = (cin != cout || stride != 1)
            .then(|| ConvBnRelu::new(store, &format!("{name}.shortcut"), cin, cout, 1, ConvGeometry::new(stride, 0, 1), false, rng));
        Bottleneck {
            reduce: ConvBnRelu::new(store, &format!("{name}.reduce"), cin, mid, 1, ConvGeometry::new(1, 0, 1), true, rng),
            spatial: ConvBnRelu::new(store, &format!("{name}.spatial"), mid, mid, 3, ConvGeometry::new(stride, dilation, dilation), true, rng),
            expand: ConvBnRelu::new(store, &format!("{name}.expand"), mid, cout, 1, ConvGeometry::new(1, 0, 1), false, rng),
            shortcut,
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = self.expand.forward(cx, self.spatial.forward(cx, self.reduce.forward(cx, x)?)?)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(cx, x)?,
            None => x,
        };
        Ok(y.add(skip)?.relu())
    }
}

/// Stem (7×7 stride 2) then max pool and four bottleneck stages with strides
/// 1, 2, 2 and a dilated last stage, so taps sit at strides 2, 4, 8, 16, 16.
#[derive(Debug, Clone)]
pub struct ResidualBackbone {
    stem: ConvBnRelu,
    stages: Vec<Vec<Bottleneck>>,
    pub tap_channels: Vec<usize>,
}

pub const RESIDUAL_TAP_STRIDES: [usize; 5] = [2, 4, 8, 16, 16];

impl ResidualBackbone {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &BackboneConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let stem = ConvBnRelu::new(store, &format!("{name}.stem"), cfg.input_channels, cfg.stem_width, 7, ConvGeometry::new(2, 3, 1), true, rng);
        let mut stages = Vec::new();
        let mut cin = cfg.stem_width;
        for (s, (&blocks, &width)) in cfg.stage_block_counts.iter().zip(&cfg.stage_widths).enumerate() {
            let (stride, dilation) = [(1, 1), (2, 1), (2, 1), (1, 2)][s];
            let stage = (0..blocks)
                .map(|b| {
                    let (c, st) = if b == 0 { (cin, stride) } else { (width, 1) };
                    Bottleneck::new(store, &format!("{name}.stage{}.block{b}", s + 1), c, width, st, dilation, rng)
                })
                .collect();
            stages.push(stage);
            cin = width;
        }
        let mut tap_channels = vec![cfg.stem_width];
        tap_channels.extend(&cfg.stage_widths);
        Ok(ResidualBackbone { stem, stages, tap_channels })
    }

    /// Stem output followed by each stage output.
    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        let stem = self.stem.forward(cx, x)?;
        let mut taps = vec![stem];
        let mut h = stem.maxpool2d(2, 2)?;
        for stage in &self.stages {
            for block in stage {
                h = block.forward(cx, h)?;
            }
            taps.push(h);
        }
        Ok(taps)
    }
}

/// Five conv blocks grouped into three taps (blocks 1–2, 3–4, 5), each tap
/// closed by a 2×2 max pool. A pool that would shrink an extent below 1 is
/// skipped.
#[derive(Debug, Clone)]
pub struct VggBackbone {
    blocks: Vec<Vec<ConvBnRelu>>,
    pub tap_channels: Vec<usize>,
}

const VGG_TAP_GROUPS: [&[usize]; 3] = [&[0, 1], &[2, 3], &[4]];

fn pool_extent(e: usize) -> usize {
    if e >= 2 {
        e / 2
    } else {
        e
    }
}

impl VggBackbone {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &BackboneConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut cin = cfg.input_channels;
        let mut blocks = Vec::new();
        for (b, (&convs, &width)) in cfg.stage_block_counts.iter().zip(&cfg.stage_widths).enumerate() {
            let block = (0..convs)
                .map(|i| {
                    let c = if i == 0 { cin } else { width };
                    ConvBnRelu::new(store, &format!("{name}.block{}.conv{i}", b + 1), c, width, 3, ConvGeometry::same(3, 1), true, rng)
                })
                .collect();
            blocks.push(block);
            cin = width;
        }
        let tap_channels = VGG_TAP_GROUPS.iter().map(|g| cfg.stage_widths[*g.last().unwrap()]).collect();
        Ok(VggBackbone { blocks, tap_channels })
    }

    /// Spatial extents of the three taps for a square `d×d` input.
    pub fn tap_extents(d: usize) -> [usize; 3] {
        let e1 = pool_extent(d);
        let e2 = pool_extent(e1);
        [e1, e2, pool_extent(e2)]
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        let mut h = x;
        let mut taps = Vec::with_capacity(3);
        for group in VGG_TAP_GROUPS {
            for &b in group {
                for conv in &self.blocks[b] {
                    h = conv.forward(cx, h)?;
                }
            }
            let (_, _, hh, ww) = h.value().dims4()?;
            if hh >= 2 && ww >= 2 {
                h = h.maxpool2d(2, 2)?;
            }
            taps.push(h);
        }
        Ok(taps)
    }
}

#[derive(Debug, Clone)]
pub enum Backbone {
    Residual(ResidualBackbone),
    Vgg(VggBackbone),
}

impl Backbone {
    pub fn build(store: &mut ParamStore, name: &str, cfg: &BackboneConfig, rng: &mut Rng) -> Result<Self> {
        Ok(match cfg.kind {
            BackboneKind::Residual => Backbone::Residual(ResidualBackbone::new(store, name, cfg, rng)?),
            BackboneKind::Vgg => Backbone::Vgg(VggBackbone::new(store, name, cfg, rng)?),
        })
    }

    pub fn tap_channels(&self) -> &[usize] {
        match self {
            Backbone::Residual(b) => &b.tap_channels,
            Backbone::Vgg(b) => &b.tap_channels,
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        match self {
            Backbone::Residual(b) => b.forward(cx, x),
            Backbone::Vgg(b) => b.forward(cx, x),
        }
    }
}
