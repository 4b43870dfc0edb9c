//! Differentiable ops. Each pairs a forward kernel with its adjoint.

use std::rc::Rc;

use rand::RngExt;

use super::tape::Var;
use crate::error::{config_err, Error, Result};
use crate::nn::ParamId;
use crate::rng::Rng;
use crate::tensor::kernels::{self, ConvGeometry, ResizeMode};
use crate::tensor::Tensor;

fn same_tape<'t>(a: &Var<'t>, b: &Var<'t>) {
    debug_assert!(std::ptr::eq(a.tape, b.tape), "vars from different tapes");
}

impl<'t> Var<'t> {
    // ------------------------------------------------------------ elementwise

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &other);
        let (a, b) = (self.value(), other.value());
        let out = kernels::broadcast_binary(&a, &b, |x, y| x + y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.tape.push("add", out, &[self, other], move |g, need| {
            Ok(vec![
                need[0].then(|| kernels::reduce_to(g, &sa)).transpose()?,
                need[1].then(|| kernels::reduce_to(g, &sb)).transpose()?,
            ])
        }))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let neg = other.scale(-1.0);
        self.add(neg)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &other);
        let (a, b) = (self.value(), other.value());
        let out = kernels::broadcast_binary(&a, &b, |x, y| x * y)?;
        Ok(self.tape.push("mul", out, &[self, other], move |g, need| {
            Ok(vec![
                need[0].then(|| kernels::mul_grad(g, &b, a.shape())).transpose()?,
                need[1].then(|| kernels::mul_grad(g, &a, b.shape())).transpose()?,
            ])
        }))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        let out = self.value().map(|x| k * x);
        self.tape.push("scale", out, &[self], move |g, _| Ok(vec![Some(g.map(|x| k * x))]))
    }

    pub fn add_scalar(self, k: f64) -> Var<'t> {
        let out = self.value().map(|x| x + k);
        self.tape.push("add_scalar", out, &[self], |g, _| Ok(vec![Some(g.clone())]))
    }

    pub fn relu(self) -> Var<'t> {
        let x = self.value();
        let out = x.map(|v| if v < 0.0 { 0.0 } else { v });
        self.tape.push("relu", out, &[self], move |g, _| {
            Ok(vec![Some(g.zip_map(&x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })?)])
        })
    }

    pub fn sigmoid(self) -> Var<'t> {
        let out = self.value().map(|v| 1.0 / (1.0 + (-v).exp()));
        let y = out.clone();
        self.tape.push("sigmoid", out, &[self], move |g, _| {
            Ok(vec![Some(g.zip_map(&y, |gv, yv| gv * yv * (1.0 - yv))?)])
        })
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let y = kernels::softmax(&self.value(), axis)?;
        let saved = y.clone();
        Ok(self.tape.push("softmax", y, &[self], move |g, _| {
            // dx = y * (g - sum_k g*y)
            let (outer, ext, inner) = kernels::axis_split(saved.shape(), axis)?;
            let (yd, gd) = (saved.data(), g.data());
            let mut dx = vec![0.0; yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * ext + k) * inner + i;
                    let dot: f64 = (0..ext).map(|k| gd[at(k)] * yd[at(k)]).sum();
                    for k in 0..ext {
                        dx[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
                    }
                }
            }
            Ok(vec![Some(Tensor::new(saved.shape(), dx)?)])
        }))
    }

    pub fn log_softmax(self, axis: usize) -> Result<Var<'t>> {
        let y = kernels::log_softmax(&self.value(), axis)?;
        let saved = y.clone();
        Ok(self.tape.push("log_softmax", y, &[self], move |g, _| {
            // dx = g - softmax * sum_k g
            let (outer, ext, inner) = kernels::axis_split(saved.shape(), axis)?;
            let (yd, gd) = (saved.data(), g.data());
            let mut dx = vec![0.0; yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * ext + k) * inner + i;
                    let total: f64 = (0..ext).map(|k| gd[at(k)]).sum();
                    for k in 0..ext {
                        dx[at(k)] = gd[at(k)] - yd[at(k)].exp() * total;
                    }
                }
            }
            Ok(vec![Some(Tensor::new(saved.shape(), dx)?)])
        }))
    }

    // ------------------------------------------------------------ reductions & shape

    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape.push("sum", Tensor::scalar(x.sum()), &[self], move |g, _| {
            Ok(vec![Some(Tensor::full(&shape, g.item()))])
        })
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let out = x.reshape(shape)?;
        let orig = x.shape().to_vec();
        Ok(self.tape.push("reshape", out, &[self], move |g, _| Ok(vec![Some(g.reshape(&orig)?)])))
    }

    /// `N×...` → `N×rest`.
    pub fn flatten(self) -> Result<Var<'t>> {
        let s = self.shape();
        let rest: usize = s[1..].iter().product();
        self.reshape(&[s[0], rest])
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let out = kernels::narrow(&x, axis, start, len)?;
        let full = x.shape().to_vec();
        Ok(self.tape.push("narrow", out, &[self], move |g, _| {
            Ok(vec![Some(kernels::narrow_backward(&full, axis, start, g)?)])
        }))
    }

    // ------------------------------------------------------------ layers

    pub fn conv2d(self, kernel: Var<'t>, bias: Option<Var<'t>>, geom: ConvGeometry) -> Result<Var<'t>> {
        let (x, k) = (self.value(), kernel.value());
        let b = bias.map(|b| b.value());
        let out = kernels::conv2d(&x, &k, b.as_deref(), geom)?;
        let mut parents = vec![self, kernel];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.tape.push("conv2d", out, &parents, move |g, need| {
            let grads = kernels::conv2d_backward(
                &x,
                &k,
                geom,
                g,
                [need[0], need[1], has_bias && need[2]],
            )?;
            let mut v = vec![grads.dx, grads.dk];
            if has_bias {
                v.push(grads.dbias);
            }
            Ok(v)
        }))
    }

    pub fn linear(self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        let (x, w) = (self.value(), weight.value());
        let b = bias.map(|b| b.value());
        let out = kernels::linear(&x, &w, b.as_deref())?;
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.tape.push("linear", out, &parents, move |g, _| {
            let (dx, dw, db) = kernels::linear_backward(&x, &w, g);
            let mut v = vec![Some(dx), Some(dw)];
            if has_bias {
                v.push(Some(db));
            }
            Ok(v)
        }))
    }

    pub fn maxpool2d(self, k: usize, stride: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (out, arg) = kernels::maxpool2d(&x, k, stride)?;
        let shape = x.shape().to_vec();
        Ok(self.tape.push("maxpool2d", out, &[self], move |g, _| {
            let mut dx = Tensor::zeros(&shape);
            let d = dx.data_mut();
            for (&src, &gv) in arg.iter().zip(g.data()) {
                d[src] += gv;
            }
            Ok(vec![Some(dx)])
        }))
    }

    pub fn global_avg_pool(self) -> Result<Var<'t>> {
        let x = self.value();
        let out = kernels::global_avg_pool(&x)?;
        let shape = x.shape().to_vec();
        Ok(self.tape.push("global_avg_pool", out, &[self], move |g, _| {
            let hw = shape[2] * shape[3];
            let mut dx = Tensor::zeros(&shape);
            for (plane, &gv) in dx.data_mut().chunks_mut(hw).zip(g.data()) {
                plane.fill(gv / hw as f64);
            }
            Ok(vec![Some(dx)])
        }))
    }

    pub fn resize(self, h: usize, w: usize, mode: ResizeMode) -> Result<Var<'t>> {
        let x = self.value();
        let out = kernels::resize(&x, h, w, mode)?;
        let shape = x.shape().to_vec();
        Ok(self.tape.push("resize", out, &[self], move |g, _| {
            Ok(vec![Some(kernels::resize_backward(&shape, g, mode)?)])
        }))
    }

    pub fn region_pool(self, grid: usize) -> Result<Var<'t>> {
        let x = self.value();
        let out = kernels::region_pool(&x, grid)?;
        let shape = x.shape().to_vec();
        Ok(self.tape.push("region_pool", out, &[self], move |g, _| {
            Ok(vec![Some(kernels::region_pool_backward(&shape, grid, g)?)])
        }))
    }

    pub fn region_broadcast(self, h: usize, w: usize) -> Result<Var<'t>> {
        let z = self.value();
        let out = kernels::region_broadcast(&z, h, w)?;
        let shape = z.shape().to_vec();
        Ok(self.tape.push("region_broadcast", out, &[self], move |g, _| {
            Ok(vec![Some(kernels::region_broadcast_backward(&shape, g)?)])
        }))
    }

    /// Batch-statistics normalisation. Records the running-stat update for
    /// `stats` (`[mean, var]` buffer ids) when given.
    pub fn batch_norm_train(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        running: Option<(ParamId, ParamId, Rc<Tensor>, Rc<Tensor>)>,
    ) -> Result<Var<'t>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let stats = kernels::channel_stats(&x)?;
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.numel() != c || bv.numel() != c {
            return Err(config_err!("batch norm has {} channels, input has {c}", gv.numel()));
        }
        let ones = vec![1.0; c];
        let zeros = vec![0.0; c];
        let xhat = kernels::channel_affine_normalize(&x, &stats.mean, &stats.var, &ones, &zeros)?;
        let out = kernels::channel_affine_normalize(&x, &stats.mean, &stats.var, gv.data(), bv.data())?;
        if let Some((mean_id, var_id, rm, rv)) = running {
            let m = kernels::BN_MOMENTUM;
            let new_mean = Tensor::from_fn(&[c], |i| (1.0 - m) * rm.data()[i] + m * stats.mean[i]);
            let new_var = Tensor::from_fn(&[c], |i| (1.0 - m) * rv.data()[i] + m * stats.var_unbiased[i]);
            self.tape.record_buffer(mean_id, new_mean);
            self.tape.record_buffer(var_id, new_var);
        }
        let inv: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + kernels::BN_EPS).sqrt()).collect();
        Ok(self.tape.push("batch_norm", out, &[self, gamma, beta], move |g, need| {
            let hw = h * w;
            let m = (n * hw) as f64;
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for b in 0..n {
                for ch in 0..c {
                    let s = (b * c + ch) * hw;
                    for i in s..s + hw {
                        dbeta[ch] += g.data()[i];
                        dgamma[ch] += g.data()[i] * xhat.data()[i];
                    }
                }
            }
            let dx = if need[0] {
                let mut dx = vec![0.0; n * c * hw];
                for b in 0..n {
                    for ch in 0..c {
                        let k = gv.data()[ch] * inv[ch] / m;
                        let s = (b * c + ch) * hw;
                        for i in s..s + hw {
                            dx[i] = k * (m * g.data()[i] - dbeta[ch] - xhat.data()[i] * dgamma[ch]);
                        }
                    }
                }
                Some(Tensor::new(&[n, c, h, w], dx)?)
            } else {
                None
            };
            Ok(vec![dx, Some(Tensor::new(&[c], dgamma)?), Some(Tensor::new(&[c], dbeta)?)])
        }))
    }

    /// Normalisation with frozen statistics: a per-channel affine map.
    pub fn batch_norm_eval(self, gamma: Var<'t>, beta: Var<'t>, mean: &Tensor, var: &Tensor) -> Result<Var<'t>> {
        let c = self.value().dims4()?.1;
        if mean.numel() != c || var.numel() != c {
            return Err(config_err!("running stats have {} channels, input has {c}", mean.numel()));
        }
        let inv = var.map(|v| 1.0 / (v + kernels::BN_EPS).sqrt());
        let xhat_shift = Tensor::from_fn(&[c], |i| -mean.data()[i] * inv.data()[i]);
        let t = self.tape;
        let inv_v = t.constant(inv.into_reshape(&[1, c, 1, 1])?);
        let xs_v = t.constant(xhat_shift.into_reshape(&[1, c, 1, 1])?);
        let xhat = self.mul(inv_v)?.add(xs_v)?;
        let g4 = gamma.reshape(&[1, c, 1, 1])?;
        let b4 = beta.reshape(&[1, c, 1, 1])?;
        xhat.mul(g4)?.add(b4)
    }

    /// Inverted dropout: zeroes with probability `p`, scales survivors by `1/(1-p)`.
    pub fn dropout(self, p: f64, training: bool, rng: &mut Rng) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&p) {
            return Err(config_err!("dropout probability must be in [0, 1), got {p}"));
        }
        if !training || p == 0.0 {
            return Ok(self);
        }
        let x = self.value();
        let keep = 1.0 / (1.0 - p);
        let mask = Tensor::from_fn(x.shape(), |_| if rng.random::<f64>() < p { 0.0 } else { keep });
        let m = self.tape.constant(mask);
        self.mul(m)
    }

    /// `x[n, label, ...]` per position of an `N×K×...` tensor, 0 where unlabeled.
    pub fn gather_axis1(self, targets: Rc<Vec<Option<usize>>>) -> Result<Var<'t>> {
        let x = self.value();
        let out = kernels::gather_axis1(&x, &targets)?;
        let shape = x.shape().to_vec();
        Ok(self.tape.push("gather", out, &[self], move |g, _| {
            let (outer, k, inner) = kernels::axis_split(&shape, 1)?;
            let mut dx = Tensor::zeros(&shape);
            let d = dx.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    if let Some(t) = targets[o * inner + i] {
                        d[(o * k + t) * inner + i] += g.data()[o * inner + i];
                    }
                }
            }
            Ok(vec![Some(dx)])
        }))
    }
}

/// Concatenation along `axis`; the gradient is split back to the parts.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::Usage("concat of nothing".into()))?;
    if parts.len() == 1 {
        return Ok(*first);
    }
    let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
    let out = kernels::concat(&refs, axis)?;
    let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    Ok(first.tape.push("concat", out, parts, move |g, need| {
        let mut start = 0;
        let mut grads = Vec::with_capacity(extents.len());
        for (i, &len) in extents.iter().enumerate() {
            grads.push(need[i].then(|| kernels::narrow(g, axis, start, len)).transpose()?);
            start += len;
        }
        Ok(grads)
    }))
}
