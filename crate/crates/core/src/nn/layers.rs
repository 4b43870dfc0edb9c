use crate::autograd::Var;
use crate::error::Result;
use crate::nn::{Ctx, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::kernels::ConvGeometry;
use crate::tensor::Tensor;

/// Kaiming-uniform (fan-in, ReLU gain): `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        geom: ConvGeometry,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let w = kaiming_uniform(&[cout, cin, kernel, kernel], cin * kernel * kernel, rng);
        let weight = store.add(&format!("{name}.weight"), w);
        let bias = bias.then(|| store.add(&format!("{name}.bias"), Tensor::zeros(&[cout])));
        Conv2d { weight, bias, geom, in_channels: cin, out_channels: cout }
    }

    /// `kernel×kernel` conv that preserves spatial extents.
    pub fn same(store: &mut ParamStore, name: &str, cin: usize, cout: usize, kernel: usize, dilation: usize, bias: bool, rng: &mut Rng) -> Self {
        Self::new(store, name, cin, cout, kernel, ConvGeometry::same(kernel, dilation), bias, rng)
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let w = cx.param(self.weight);
        let b = self.bias.map(|b| cx.param(b));
        x.conv2d(w, b, self.geom)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: store.add(&format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::ones(&[channels])),
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let (g, b) = (cx.param(self.gamma), cx.param(self.beta));
        if cx.training {
            let running = (
                self.running_mean,
                self.running_var,
                cx.store.get_rc(self.running_mean),
                cx.store.get_rc(self.running_var),
            );
            x.batch_norm_train(g, b, Some(running))
        } else {
            x.batch_norm_eval(g, b, cx.store.get(self.running_mean), cx.store.get(self.running_var))
        }
    }
}

/// Convolution, batch norm, optional ReLU. Bias-free since batch norm follows.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub relu: bool,
}

impl ConvBnRelu {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, kernel: usize, geom: ConvGeometry, relu: bool, rng: &mut Rng) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, kernel, geom, false, rng),
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), cout),
            relu,
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = self.bn.forward(cx, self.conv.forward(cx, x)?)?;
        Ok(if self.relu { y.relu() } else { y })
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: store.add(&format!("{name}.weight"), kaiming_uniform(&[dout, din], din, rng)),
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[dout])),
            in_features: din,
            out_features: dout,
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.linear(cx.param(self.weight), Some(cx.param(self.bias)))
    }
}
