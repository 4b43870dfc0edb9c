//! Region pyramid attention.
//!
//! Each group partitions the map into a `g×g` grid of blocks (or keeps single
//! pixels), pools every block to one vector, runs self-attention across the
//! blocks, paints the result back over the blocks, and the groups are summed
//! and multiplied onto the input.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autograd::Var;
use crate::error::{config_err, Result};
use crate::nn::{Conv2d, Ctx, ParamStore};
use crate::rng::Rng;
use crate::tensor::kernels::ConvGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionGroup {
    SinglePixel,
    Grid(usize),
}

impl fmt::Display for RegionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionGroup::SinglePixel => write!(f, "single"),
            RegionGroup::Grid(g) => write!(f, "{g}"),
        }
    }
}

impl Serialize for RegionGroup {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RegionGroup::SinglePixel => s.serialize_str("single"),
            RegionGroup::Grid(g) => s.serialize_u64(*g as u64),
        }
    }
}

impl<'de> Deserialize<'de> for RegionGroup {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Grid(usize),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Grid(g) => Ok(RegionGroup::Grid(g)),
            Repr::Name(n) if n == "single" => Ok(RegionGroup::SinglePixel),
            Repr::Name(n) => Err(serde::de::Error::custom(format!(
                "unknown region group {n:?}, expected \"single\" or a grid size"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionPyramidConfig {
    pub groups: Vec<RegionGroup>,
}

impl Default for RegionPyramidConfig {
    fn default() -> Self {
        use RegionGroup::*;
        RegionPyramidConfig { groups: vec![SinglePixel, Grid(4), Grid(2), Grid(1)] }
    }
}

impl RegionPyramidConfig {
    /// The four combinations of the group ablation.
    pub fn ablation_set() -> Vec<RegionPyramidConfig> {
        use RegionGroup::*;
        [
            vec![SinglePixel, Grid(8), Grid(4), Grid(2), Grid(1)],
            vec![SinglePixel, Grid(4), Grid(2), Grid(1)],
            vec![SinglePixel, Grid(2), Grid(1)],
            vec![SinglePixel, Grid(1)],
        ]
        .into_iter()
        .map(|groups| RegionPyramidConfig { groups })
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(config_err!("region pyramid needs at least one group"));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if self.groups[..i].contains(g) {
                return Err(config_err!("duplicate region group {g}"));
            }
            if let RegionGroup::Grid(n) = g {
                if ![8, 4, 2, 1].contains(n) {
                    return Err(config_err!("region grid must be one of 8, 4, 2, 1; got {n}"));
                }
            }
        }
        Ok(())
    }

    /// Every grid fits an `h×w` map.
    pub fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        for g in &self.groups {
            if let RegionGroup::Grid(n) = g {
                if *n > h.min(w) {
                    return Err(config_err!("region grid {n} does not fit a {h}x{w} feature map"));
                }
            }
        }
        Ok(())
    }
}

/// Self-attention over region vectors `N×F×G`, arranged as a `1×G` map:
/// a 3×3 conv to `F/2` channels, ReLU, a 1×1 conv to one channel, softmax
/// across the `G` regions; the weights scale a 1×1 value projection, plus a
/// residual.
#[derive(Debug, Clone)]
pub struct RegionSelfAttention {
    pub key: Conv2d,
    pub score: Conv2d,
    pub value: Conv2d,
}

impl RegionSelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut Rng) -> Self {
        let mid = (channels / 2).max(1);
        RegionSelfAttention {
            key: Conv2d::same(store, &format!("{name}.conv3"), channels, mid, 3, 1, true, rng),
            score: Conv2d::same(store, &format!("{name}.conv1"), mid, 1, 1, 1, true, rng),
            value: Conv2d::new(store, &format!("{name}.value"), channels, channels, 1, ConvGeometry::new(1, 0, 1), true, rng),
        }
    }

    /// Attention weights `N×1×1×G`, each row summing to 1.
    pub fn weights<'t>(&self, cx: &Ctx<'t>, regions: Var<'t>) -> Result<Var<'t>> {
        let r = as_row_map(regions)?;
        let hidden = self.key.forward(cx, r)?.relu();
        self.score.forward(cx, hidden)?.softmax(3)
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, regions: Var<'t>) -> Result<Var<'t>> {
        let shape = regions.shape();
        let r = as_row_map(regions)?;
        let a = self.weights(cx, regions)?;
        let v = self.value.forward(cx, r)?;
        a.mul(v)?.add(r)?.reshape(&shape)
    }
}

fn as_row_map(regions: Var<'_>) -> Result<Var<'_>> {
    match *regions.shape().as_slice() {
        [n, f, g] => regions.reshape(&[n, f, 1, g]),
        ref s => Err(config_err!("region representation must be N×F×G, got {s:?}")),
    }
}

#[derive(Debug, Clone)]
pub struct RePyAtt {
    pub config: RegionPyramidConfig,
    pub groups: Vec<RegionSelfAttention>,
}

impl RePyAtt {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, config: &RegionPyramidConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let groups = config
            .groups
            .iter()
            .enumerate()
            .map(|(i, _)| RegionSelfAttention::new(store, &format!("{name}.group{i}.att"), channels, rng))
            .collect();
        Ok(RePyAtt { config: config.clone(), groups })
    }

    /// The attended group map `Z_i` painted back to `N×F×H×W`.
    pub fn group_map<'t>(&self, cx: &Ctx<'t>, x: Var<'t>, index: usize) -> Result<Var<'t>> {
        let (n, f, h, w) = x.value().dims4()?;
        let att = &self.groups[index];
        match self.config.groups[index] {
            RegionGroup::SinglePixel => att.forward(cx, x.reshape(&[n, f, h * w])?)?.reshape(&[n, f, h, w]),
            RegionGroup::Grid(g) => att.forward(cx, x.region_pool(g)?)?.region_broadcast(h, w),
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let (_, _, h, w) = x.value().dims4()?;
        self.config.check_extent(h, w)?;
        let mut total = self.group_map(cx, x, 0)?;
        for i in 1..self.groups.len() {
            total = total.add(self.group_map(cx, x, i)?)?;
        }
        total.mul(x)
    }
}
