//! Multi-scale attention fusion.
//!
//! Inputs arrive as `(feature, scale)` pairs, where `scale` is the stride of
//! the feature relative to the image. Features with a smaller scale than the
//! current one are aggregated by the down-aggregation module, larger ones by
//! the up-aggregation module; both resize to the current extent, compress each
//! input to the current width and fuse with a 1×1 conv. The two aggregates are
//! gated against each other, and the result is combined with an
//! attention-refined (or untouched) copy of the current feature.

use serde::{Deserialize, Serialize};

use crate::autograd::{concat, Var};
use crate::error::{config_err, Error, Result};
use crate::nn::{Conv2d, ConvBnRelu, Ctx, ParamStore};
use crate::rng::Rng;
use crate::tensor::kernels::{ConvGeometry, ResizeMode};
use crate::tensor::Tensor;

use super::region::{RePyAtt, RegionPyramidConfig};

fn pointwise() -> ConvGeometry {
    ConvGeometry::new(1, 0, 1)
}

/// Projects each input to `width` channels, resizes it to a common extent and
/// fuses the concatenation with Conv-BN-ReLU. An empty input list yields zeros.
#[derive(Debug, Clone)]
pub struct Aggregation {
    pub compress: Vec<Conv2d>,
    pub fuse: Option<ConvBnRelu>,
    pub width: usize,
}

impl Aggregation {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: &[usize], width: usize, rng: &mut Rng) -> Self {
        let compress = in_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| Conv2d::new(store, &format!("{name}.compress{i}"), c, width, 1, pointwise(), true, rng))
            .collect::<Vec<_>>();
        let fuse = (!compress.is_empty())
            .then(|| ConvBnRelu::new(store, &format!("{name}.fuse"), width * compress.len(), width, 1, pointwise(), true, rng));
        Aggregation { compress, fuse, width }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, inputs: &[Var<'t>], n: usize, h: usize, w: usize) -> Result<Var<'t>> {
        if inputs.len() != self.compress.len() {
            return Err(config_err!("aggregation built for {} inputs, got {}", self.compress.len(), inputs.len()));
        }
        let Some(fuse) = &self.fuse else {
            return Ok(cx.input(Tensor::zeros(&[n, self.width, h, w])));
        };
        let mut parts = Vec::with_capacity(inputs.len());
        for (x, conv) in inputs.iter().zip(&self.compress) {
            let (_, _, xh, xw) = x.value().dims4()?;
            let y = conv.forward(cx, *x)?;
            parts.push(if (xh, xw) == (h, w) { y } else { y.resize(h, w, ResizeMode::Bilinear)? });
        }
        fuse.forward(cx, concat(&parts, 1)?)
    }
}

/// Per-pixel gates `A ∈ (0,1)^{2×H×W}` weighing the lower-layer aggregate
/// against the higher-layer one.
#[derive(Debug, Clone)]
pub struct AttFuse {
    pub conv3: Conv2d,
    pub conv1: Conv2d,
}

impl AttFuse {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut Rng) -> Self {
        AttFuse {
            conv3: Conv2d::same(store, &format!("{name}.conv3"), 2 * channels, channels, 3, 1, true, rng),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), channels, 2, 1, pointwise(), true, rng),
        }
    }

    pub fn gates<'t>(&self, cx: &Ctx<'t>, low: Var<'t>, high: Var<'t>) -> Result<Var<'t>> {
        if low.shape() != high.shape() {
            return Err(config_err!("attention fusion inputs differ in shape: {:?} vs {:?}", low.shape(), high.shape()));
        }
        let hidden = self.conv3.forward(cx, concat(&[low, high], 1)?)?.relu();
        Ok(self.conv1.forward(cx, hidden)?.sigmoid())
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, low: Var<'t>, high: Var<'t>) -> Result<Var<'t>> {
        let a = self.gates(cx, low, high)?;
        let a_low = a.narrow(1, 0, 1)?;
        let a_high = a.narrow(1, 1, 1)?;
        a_low.mul(low)?.add(a_high.mul(high)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SameLayerMode {
    #[default]
    Repyatt,
    Direct,
}

#[derive(Debug, Clone)]
pub struct MuAttFusion {
    pub current: usize,
    pub lower: Vec<usize>,
    pub higher: Vec<usize>,
    pub dam: Aggregation,
    pub uam: Aggregation,
    pub attfuse: AttFuse,
    pub same: Option<RePyAtt>,
    pub out: Conv2d,
    pub width: usize,
}

impl MuAttFusion {
    /// `channels[i]` and `scales[i]` describe input `i`; `current` picks the
    /// input whose extent and width the output keeps.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: &[usize],
        scales: &[usize],
        current: usize,
        mode: SameLayerMode,
        pyramid: &RegionPyramidConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Usage("fusion needs at least one input".into()));
        }
        if channels.len() != scales.len() || current >= channels.len() {
            return Err(config_err!(
                "fusion needs one scale per input and a current index in range ({} channels, {} scales, current {current})",
                channels.len(),
                scales.len()
            ));
        }
        let here = scales[current];
        let mut lower = Vec::new();
        let mut higher = Vec::new();
        for (i, &s) in scales.iter().enumerate() {
            if i == current {
                continue;
            }
            match s.cmp(&here) {
                std::cmp::Ordering::Less => lower.push(i),
                std::cmp::Ordering::Greater => higher.push(i),
                std::cmp::Ordering::Equal => {
                    return Err(config_err!("fusion input {i} shares scale {s} with the current input {current}"))
                }
            }
        }
        let width = channels[current];
        let pick = |idx: &[usize]| idx.iter().map(|&i| channels[i]).collect::<Vec<_>>();
        let same = match mode {
            SameLayerMode::Repyatt => Some(RePyAtt::new(store, &format!("{name}.repyatt"), width, pyramid, rng)?),
            SameLayerMode::Direct => None,
        };
        Ok(MuAttFusion {
            current,
            dam: Aggregation::new(store, &format!("{name}.dam"), &pick(&lower), width, rng),
            uam: Aggregation::new(store, &format!("{name}.uam"), &pick(&higher), width, rng),
            attfuse: AttFuse::new(store, &format!("{name}.attfuse"), width, rng),
            same,
            out: Conv2d::new(store, &format!("{name}.out"), 2 * width, width, 1, pointwise(), true, rng),
            lower,
            higher,
            width,
        })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        let expected = 1 + self.lower.len() + self.higher.len();
        if inputs.len() != expected {
            return Err(config_err!("fusion built for {expected} inputs, got {}", inputs.len()));
        }
        let x = inputs[self.current];
        let (n, c, h, w) = x.value().dims4()?;
        if c != self.width {
            return Err(config_err!("fusion current input has {c} channels, expected {}", self.width));
        }
        let gather = |idx: &[usize]| idx.iter().map(|&i| inputs[i]).collect::<Vec<_>>();
        let low = self.dam.forward(cx, &gather(&self.lower), n, h, w)?;
        let high = self.uam.forward(cx, &gather(&self.higher), n, h, w)?;
        let fused = self.attfuse.forward(cx, low, high)?;
        let same = match &self.same {
            Some(att) => att.forward(cx, x)?,
            None => x,
        };
        self.out.forward(cx, concat(&[same, fused], 1)?)
    }
}
