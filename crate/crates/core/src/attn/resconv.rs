use crate::autograd::Var;
use crate::error::Result;
use crate::nn::{ConvBnRelu, Ctx, ParamStore};
use crate::rng::Rng;
use crate::tensor::kernels::ConvGeometry;

/// 1×1 reduction to the target width followed by a residual pair of 3×3
/// convolutions with dilation rates 1 and 3. Spatial extents are preserved.
#[derive(Debug, Clone)]
pub struct ResConv {
    reduce: ConvBnRelu,
    conv_a: ConvBnRelu,
    conv_b: ConvBnRelu,
    pub out_channels: usize,
}

impl ResConv {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, width: usize, rng: &mut Rng) -> Self {
        ResConv {
            reduce: ConvBnRelu::new(store, &format!("{name}.reduce"), cin, width, 1, ConvGeometry::new(1, 0, 1), true, rng),
            conv_a: ConvBnRelu::new(store, &format!("{name}.conv_r1"), width, width, 3, ConvGeometry::same(3, 1), true, rng),
            conv_b: ConvBnRelu::new(store, &format!("{name}.conv_r3"), width, width, 3, ConvGeometry::same(3, 3), false, rng),
            out_channels: width,
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let base = self.reduce.forward(cx, x)?;
        let refined = self.conv_b.forward(cx, self.conv_a.forward(cx, base)?)?;
        Ok(base.add(refined)?.relu())
    }
}
