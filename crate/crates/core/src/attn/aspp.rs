//! Atrous spatial pyramid pooling with cross-branch attention gates.

use serde::{Deserialize, Serialize};

use crate::autograd::{concat, Var};
use crate::error::{config_err, Result};
use crate::nn::{Conv2d, ConvBnRelu, Ctx, ParamStore};
use crate::rng::Rng;
use crate::tensor::kernels::{ConvGeometry, ResizeMode};

fn pointwise() -> ConvGeometry {
    ConvGeometry::new(1, 0, 1)
}

/// Additive attention gate: `sigmoid(φ(ReLU(W_g·X_j + W_x·X_i)))`, one channel.
#[derive(Debug, Clone)]
pub struct CrsAtt {
    pub w_g: Conv2d,
    pub w_x: Conv2d,
    pub phi: Conv2d,
}

impl CrsAtt {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut Rng) -> Self {
        let inner = (channels / 2).max(1);
        CrsAtt {
            w_g: Conv2d::new(store, &format!("{name}.w_g"), channels, inner, 1, pointwise(), true, rng),
            w_x: Conv2d::new(store, &format!("{name}.w_x"), channels, inner, 1, pointwise(), true, rng),
            phi: Conv2d::new(store, &format!("{name}.phi"), inner, 1, 1, pointwise(), true, rng),
        }
    }

    /// Gate map `N×1×H×W` for guide `x_j` onto `x_i`.
    pub fn forward<'t>(&self, cx: &Ctx<'t>, x_j: Var<'t>, x_i: Var<'t>) -> Result<Var<'t>> {
        if x_j.shape() != x_i.shape() {
            return Err(config_err!("cross-scale attention inputs differ in shape: {:?} vs {:?}", x_j.shape(), x_i.shape()));
        }
        let joint = self.w_g.forward(cx, x_j)?.add(self.w_x.forward(cx, x_i)?)?.relu();
        Ok(self.phi.forward(cx, joint)?.sigmoid())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsppConfig {
    pub rates: [usize; 3],
    /// Cross-branch gates on; off gives plain ASPP.
    pub gated: bool,
}

impl Default for AsppConfig {
    fn default() -> Self {
        AsppConfig { rates: [6, 12, 18], gated: true }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveAspp {
    pub branches: Vec<ConvBnRelu>,
    pub pool_conv: Conv2d,
    /// Gate for ordered pair `(j, i)` among the four convolutional branches at
    /// `gates[i][j]`, `None` on the diagonal.
    pub gates: Option<Vec<Vec<Option<CrsAtt>>>>,
    pub project: ConvBnRelu,
    pub width: usize,
}

/// Branch outputs before and after the cross-branch gating.
pub struct AsppBranches<'t> {
    pub raw: Vec<Var<'t>>,
    pub gated: Vec<Var<'t>>,
}

impl AdaptiveAspp {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, width: usize, cout: usize, config: &AsppConfig, rng: &mut Rng) -> Result<Self> {
        if config.rates.contains(&0) {
            return Err(config_err!("ASPP dilation rates must be positive, got {:?}", config.rates));
        }
        let mut branches = vec![ConvBnRelu::new(store, &format!("{name}.branch0"), cin, width, 1, pointwise(), true, rng)];
        for (i, &r) in config.rates.iter().enumerate() {
            branches.push(ConvBnRelu::new(store, &format!("{name}.branch{}", i + 1), cin, width, 3, ConvGeometry::same(3, r), true, rng));
        }
        let pool_conv = Conv2d::new(store, &format!("{name}.pool"), cin, width, 1, pointwise(), true, rng);
        let gates = config.gated.then(|| {
            (0..4)
                .map(|i| {
                    (0..4)
                        .map(|j| (i != j).then(|| CrsAtt::new(store, &format!("{name}.crsatt{j}to{i}"), width, rng)))
                        .collect()
                })
                .collect()
        });
        let project = ConvBnRelu::new(store, &format!("{name}.project"), 5 * width, cout, 1, pointwise(), true, rng);
        Ok(AdaptiveAspp { branches, pool_conv, gates, project, width })
    }

    pub fn branches<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<AsppBranches<'t>> {
        let (_, _, h, w) = x.value().dims4()?;
        let mut raw = self.branches.iter().map(|b| b.forward(cx, x)).collect::<Result<Vec<_>>>()?;
        let pooled = self.pool_conv.forward(cx, x.global_avg_pool()?)?.relu();
        raw.push(pooled.resize(h, w, ResizeMode::Bilinear)?);
        let gated = match &self.gates {
            None => raw.clone(),
            Some(gates) => {
                let mut out = Vec::with_capacity(5);
                for (i, row) in gates.iter().enumerate() {
                    let mut acc = raw[i];
                    for (j, gate) in row.iter().enumerate() {
                        if let Some(gate) = gate {
                            acc = acc.add(gate.forward(cx, raw[j], raw[i])?.mul(raw[i])?)?;
                        }
                    }
                    out.push(acc);
                }
                out.push(raw[4]);
                out
            }
        };
        Ok(AsppBranches { raw, gated })
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let b = self.branches(cx, x)?;
        self.project.forward(cx, concat(&b.gated, 1)?)
    }
}
