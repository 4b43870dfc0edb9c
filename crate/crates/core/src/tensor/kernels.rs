//! Forward and adjoint kernels on plain tensors.
//!
//! These are the numeric primitives behind every differentiable op. They know
//! nothing about the tape; `autograd::ops` pairs each forward with its adjoint.

use super::Tensor;
use crate::error::{config_err, Error, Result};

/// `c = alpha * a·b + beta * c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the slices cover every strided index touched by dgemm (checked above in debug).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

// ---------------------------------------------------------------- convolution

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeometry { stride, padding, dilation }
    }

    /// Stride 1 with the padding that preserves extents for an odd kernel.
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        ConvGeometry { stride: 1, padding: dilation * (kernel - 1) / 2, dilation }
    }

    pub fn out_extent(&self, len: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(config_err!("stride and dilation must be >= 1"));
        }
        let span = self.dilation * (kernel - 1) + 1;
        let padded = len + 2 * self.padding;
        if padded < span {
            return Err(config_err!(
                "non-positive output extent: input {len} + 2*{} padding < effective kernel {span}",
                self.padding
            ));
        }
        Ok((padded - span) / self.stride + 1)
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    (cin, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    g: ConvGeometry,
    (ho, wo): (usize, usize),
    cols: &mut [f64],
) {
    let plane = ho * wo;
    for c in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let di = (ki * g.dilation) as isize - g.padding as isize;
                let dj = (kj * g.dilation) as isize - g.padding as isize;
                for oy in 0..ho {
                    let iy = (oy * g.stride) as isize + di;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride) as isize + dj;
                        *v = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    (cin, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    g: ConvGeometry,
    (ho, wo): (usize, usize),
    dx: &mut [f64],
) {
    let plane = ho * wo;
    for c in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let di = (ki * g.dilation) as isize - g.padding as isize;
                let dj = (kj * g.dilation) as isize - g.padding as isize;
                for oy in 0..ho {
                    let iy = (oy * g.stride) as isize + di;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (c * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * g.stride) as isize + dj;
                        if ix >= 0 && ix < w as isize {
                            dx[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl ConvDims {
    fn new(x: &Tensor, k: &Tensor, g: ConvGeometry) -> Result<Self> {
        let (n, cin, h, w) = x.dims4()?;
        let (cout, kcin, kh, kw) = k.dims4()?;
        if kcin != cin {
            return Err(config_err!(
                "conv2d input has {cin} channels but kernel expects {kcin}"
            ));
        }
        let ho = g.out_extent(h, kh)?;
        let wo = g.out_extent(w, kw)?;
        Ok(ConvDims { n, cin, h, w, cout, kh, kw, ho, wo })
    }

    fn pointwise(&self, g: ConvGeometry) -> bool {
        self.kh == 1 && self.kw == 1 && g.stride == 1 && g.padding == 0
    }
}

/// Cross-correlation with zero padding.
pub fn conv2d(x: &Tensor, k: &Tensor, bias: Option<&Tensor>, g: ConvGeometry) -> Result<Tensor> {
    let d = ConvDims::new(x, k, g)?;
    if let Some(b) = bias {
        if b.numel() != d.cout {
            return Err(config_err!("conv2d bias has {} values, need {}", b.numel(), d.cout));
        }
    }
    let plane = d.ho * d.wo;
    let red = d.cin * d.kh * d.kw;
    let mut out = vec![0.0; d.n * d.cout * plane];
    let mut cols = if d.pointwise(g) { Vec::new() } else { vec![0.0; red * plane] };
    for n in 0..d.n {
        let xn = &x.data()[n * d.cin * d.h * d.w..(n + 1) * d.cin * d.h * d.w];
        let cols_ref: &[f64] = if d.pointwise(g) {
            xn
        } else {
            im2col(xn, (d.cin, d.h, d.w), (d.kh, d.kw), g, (d.ho, d.wo), &mut cols);
            &cols
        };
        let on = &mut out[n * d.cout * plane..(n + 1) * d.cout * plane];
        if let Some(b) = bias {
            for (co, chunk) in on.chunks_mut(plane).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        gemm(d.cout, red, plane, 1.0, k.data(), (red, 1), cols_ref, (plane, 1), 1.0, on, (plane, 1));
    }
    Tensor::new(&[d.n, d.cout, d.ho, d.wo], out)
}

pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dk: Option<Tensor>,
    pub dbias: Option<Tensor>,
}

pub fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    g: ConvGeometry,
    dout: &Tensor,
    need: [bool; 3],
) -> Result<ConvGrads> {
    let d = ConvDims::new(x, k, g)?;
    let plane = d.ho * d.wo;
    let red = d.cin * d.kh * d.kw;
    let in_sz = d.cin * d.h * d.w;
    let mut dx = need[0].then(|| vec![0.0; x.numel()]);
    let mut dk = need[1].then(|| vec![0.0; k.numel()]);
    let mut cols = vec![0.0; if d.pointwise(g) { 0 } else { red * plane }];
    let mut dcols = vec![0.0; if d.pointwise(g) || !need[0] { 0 } else { red * plane }];
    for n in 0..d.n {
        let xn = &x.data()[n * in_sz..(n + 1) * in_sz];
        let dn = &dout.data()[n * d.cout * plane..(n + 1) * d.cout * plane];
        if let Some(dk) = dk.as_mut() {
            let cols_ref: &[f64] = if d.pointwise(g) {
                xn
            } else {
                im2col(xn, (d.cin, d.h, d.w), (d.kh, d.kw), g, (d.ho, d.wo), &mut cols);
                &cols
            };
            // dK[cout, red] += dOut[cout, plane] · colsᵀ[plane, red]
            gemm(d.cout, plane, red, 1.0, dn, (plane, 1), cols_ref, (1, plane), 1.0, dk, (red, 1));
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_sz..(n + 1) * in_sz];
            if d.pointwise(g) {
                gemm(d.cin, d.cout, plane, 1.0, k.data(), (1, red), dn, (plane, 1), 1.0, dxn, (plane, 1));
            } else {
                gemm(red, d.cout, plane, 1.0, k.data(), (1, red), dn, (plane, 1), 0.0, &mut dcols, (plane, 1));
                col2im(&dcols, (d.cin, d.h, d.w), (d.kh, d.kw), g, (d.ho, d.wo), dxn);
            }
        }
    }
    let dbias = if need[2] {
        let mut db = vec![0.0; d.cout];
        for n in 0..d.n {
            for (co, acc) in db.iter_mut().enumerate() {
                let s = (n * d.cout + co) * plane;
                *acc += dout.data()[s..s + plane].iter().sum::<f64>();
            }
        }
        Some(Tensor::new(&[d.cout], db)?)
    } else {
        None
    };
    Ok(ConvGrads {
        dx: dx.map(|v| Tensor::new(x.shape(), v)).transpose()?,
        dk: dk.map(|v| Tensor::new(k.shape(), v)).transpose()?,
        dbias,
    })
}

// ---------------------------------------------------------------- linear

/// `x·wᵀ + bias` for `x: N×Din`, `w: Dout×Din`.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (n, din) = x.dims2()?;
    let (dout, wdin) = w.dims2()?;
    if din != wdin {
        return Err(config_err!("linear input width {din} does not match weight width {wdin}"));
    }
    let mut out = vec![0.0; n * dout];
    if let Some(b) = bias {
        if b.numel() != dout {
            return Err(config_err!("linear bias has {} values, need {dout}", b.numel()));
        }
        for row in out.chunks_mut(dout) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(n, din, dout, 1.0, x.data(), (din, 1), w.data(), (1, din), 1.0, &mut out, (dout, 1));
    Tensor::new(&[n, dout], out)
}

pub fn linear_backward(x: &Tensor, w: &Tensor, dout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dw_rows = w.shape()[0];
    let mut dx = vec![0.0; n * din];
    gemm(n, dw_rows, din, 1.0, dout.data(), (dw_rows, 1), w.data(), (din, 1), 0.0, &mut dx, (din, 1));
    let mut dw = vec![0.0; dw_rows * din];
    gemm(dw_rows, n, din, 1.0, dout.data(), (1, dw_rows), x.data(), (din, 1), 0.0, &mut dw, (din, 1));
    let mut db = vec![0.0; dw_rows];
    for row in dout.data().chunks(dw_rows) {
        for (a, b) in db.iter_mut().zip(row) {
            *a += b;
        }
    }
    (
        Tensor { shape: x.shape().to_vec(), data: dx },
        Tensor { shape: w.shape().to_vec(), data: dw },
        Tensor { shape: vec![dw_rows], data: db },
    )
}

// ---------------------------------------------------------------- pooling

/// Max pooling without padding. Returns the output and, per output element,
/// the flat input index of the maximum (first occurrence in row-major window order).
pub fn maxpool2d(x: &Tensor, k: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if k == 0 || stride == 0 {
        return Err(config_err!("maxpool window and stride must be >= 1"));
    }
    if h < k || w < k {
        return Err(config_err!("maxpool window {k} larger than input {h}x{w}"));
    }
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                let mut best_v = x.data()[best];
                for i in 0..k {
                    for j in 0..k {
                        let idx = base + (oy * stride + i) * w + ox * stride + j;
                        let v = x.data()[idx];
                        if v > best_v || (v.is_nan() && !best_v.is_nan()) {
                            best_v = v;
                            best = idx;
                        }
                    }
                }
                out.push(best_v);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, ho, wo], out)?, arg))
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let data = x.data().chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
    Tensor::new(&[n, c, 1, 1], data)
}

// ---------------------------------------------------------------- resize

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    Bilinear,
    Nearest,
}

/// Per output index, up to two `(source index, weight)` taps.
///
/// Source coordinate is `(i + 0.5) * src / dst - 0.5` (corners not aligned),
/// clamped to the valid range. Nearest rounds half down.
pub fn resize_taps(src: usize, dst: usize, mode: ResizeMode) -> Vec<[(usize, f64); 2]> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = (i as f64 + 0.5) * scale - 0.5;
            match mode {
                ResizeMode::Nearest => {
                    let idx = (s - 0.5).ceil().clamp(0.0, (src - 1) as f64) as usize;
                    [(idx, 1.0), (idx, 0.0)]
                }
                ResizeMode::Bilinear => {
                    let s = s.clamp(0.0, (src - 1) as f64);
                    let i0 = s.floor() as usize;
                    let i1 = (i0 + 1).min(src - 1);
                    let l = s - i0 as f64;
                    [(i0, 1.0 - l), (i1, l)]
                }
            }
        })
        .collect()
}

pub fn resize(x: &Tensor, ho: usize, wo: usize, mode: ResizeMode) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if ho == 0 || wo == 0 {
        return Err(config_err!("resize target must be >= 1"));
    }
    if (ho, wo) == (h, w) {
        return Ok(x.clone());
    }
    let ty = resize_taps(h, ho, mode);
    let tx = resize_taps(w, wo, mode);
    let mut out = vec![0.0; n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for (i, row_taps) in ty.iter().enumerate() {
            for (j, col_taps) in tx.iter().enumerate() {
                let mut acc = 0.0;
                for &(yi, wy) in row_taps {
                    for &(xi, wx) in col_taps {
                        acc += wy * wx * src[yi * w + xi];
                    }
                }
                dst[i * wo + j] = acc;
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out)
}

pub fn resize_backward(in_shape: &[usize], dout: &Tensor, mode: ResizeMode) -> Result<Tensor> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (_, _, ho, wo) = dout.dims4()?;
    if (ho, wo) == (h, w) {
        return Ok(dout.clone());
    }
    let ty = resize_taps(h, ho, mode);
    let tx = resize_taps(w, wo, mode);
    let mut dx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let g = &dout.data()[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for (i, row_taps) in ty.iter().enumerate() {
            for (j, col_taps) in tx.iter().enumerate() {
                let v = g[i * wo + j];
                for &(yi, wy) in row_taps {
                    for &(xi, wx) in col_taps {
                        dst[yi * w + xi] += wy * wx * v;
                    }
                }
            }
        }
    }
    Tensor::new(in_shape, dx)
}

// ---------------------------------------------------------------- regions

/// Floor-boundary partition of `len` into `g` spans: span `b` covers
/// `floor(b*len/g) .. floor((b+1)*len/g)`.
pub fn region_bounds(len: usize, g: usize) -> Vec<(usize, usize)> {
    (0..g).map(|b| (b * len / g, (b + 1) * len / g)).collect()
}

fn check_grid(h: usize, w: usize, g: usize) -> Result<()> {
    if g == 0 || g > h.min(w) {
        return Err(config_err!("region grid {g} invalid for a {h}x{w} map"));
    }
    Ok(())
}

/// Block means over a `g×g` grid: `N×F×H×W` → `N×F×g²`, blocks row-major.
pub fn region_pool(x: &Tensor, g: usize) -> Result<Tensor> {
    let (n, f, h, w) = x.dims4()?;
    check_grid(h, w, g)?;
    let rows = region_bounds(h, g);
    let cols = region_bounds(w, g);
    let mut out = Vec::with_capacity(n * f * g * g);
    for plane in x.data().chunks(h * w) {
        for &(r0, r1) in &rows {
            for &(c0, c1) in &cols {
                let mut acc = 0.0;
                for r in r0..r1 {
                    acc += plane[r * w + c0..r * w + c1].iter().sum::<f64>();
                }
                out.push(acc / ((r1 - r0) * (c1 - c0)) as f64);
            }
        }
    }
    Tensor::new(&[n, f, g * g], out)
}

pub fn region_pool_backward(in_shape: &[usize], g: usize, dout: &Tensor) -> Result<Tensor> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let rows = region_bounds(h, g);
    let cols = region_bounds(w, g);
    let mut dx = vec![0.0; in_shape.iter().product()];
    for (plane, gp) in dx.chunks_mut(h * w).zip(dout.data().chunks(g * g)) {
        for (bi, &(r0, r1)) in rows.iter().enumerate() {
            for (bj, &(c0, c1)) in cols.iter().enumerate() {
                let v = gp[bi * g + bj] / ((r1 - r0) * (c1 - c0)) as f64;
                for r in r0..r1 {
                    plane[r * w + c0..r * w + c1].iter_mut().for_each(|d| *d += v);
                }
            }
        }
    }
    Tensor::new(in_shape, dx)
}

/// Paint each block value of `N×F×g²` back over its block of an `H×W` map.
/// On divisible extents this equals nearest-neighbour upsampling.
pub fn region_broadcast(z: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, f, gg) = match *z.shape() {
        [n, f, gg] => (n, f, gg),
        _ => return Err(config_err!("region_broadcast expects N×F×G, got {:?}", z.shape())),
    };
    let g = (gg as f64).sqrt().round() as usize;
    if g * g != gg {
        return Err(config_err!("region count {gg} is not a square grid"));
    }
    check_grid(h, w, g)?;
    let rows = region_bounds(h, g);
    let cols = region_bounds(w, g);
    let mut out = vec![0.0; n * f * h * w];
    for (plane, zp) in out.chunks_mut(h * w).zip(z.data().chunks(gg)) {
        for (bi, &(r0, r1)) in rows.iter().enumerate() {
            for (bj, &(c0, c1)) in cols.iter().enumerate() {
                for r in r0..r1 {
                    plane[r * w + c0..r * w + c1].fill(zp[bi * g + bj]);
                }
            }
        }
    }
    Tensor::new(&[n, f, h, w], out)
}

pub fn region_broadcast_backward(z_shape: &[usize], dout: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = dout.dims4()?;
    let gg = z_shape[2];
    let g = (gg as f64).sqrt().round() as usize;
    let rows = region_bounds(h, g);
    let cols = region_bounds(w, g);
    let mut dz = vec![0.0; z_shape.iter().product()];
    for (zp, plane) in dz.chunks_mut(gg).zip(dout.data().chunks(h * w)) {
        for (bi, &(r0, r1)) in rows.iter().enumerate() {
            for (bj, &(c0, c1)) in cols.iter().enumerate() {
                let mut acc = 0.0;
                for r in r0..r1 {
                    acc += plane[r * w + c0..r * w + c1].iter().sum::<f64>();
                }
                zp[bi * g + bj] = acc;
            }
        }
    }
    Tensor::new(z_shape, dz)
}

// ---------------------------------------------------------------- axis helpers

/// `(outer, extent, inner)` split of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(config_err!("axis {axis} out of range for {shape:?}"));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

/// Softmax along `axis`, max-shifted for stability.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, ext, inner) = axis_split(x.shape(), axis)?;
    let mut out = x.data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * ext + k) * inner + i;
            let m = (0..ext).map(|k| out[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for k in 0..ext {
                let e = (out[at(k)] - m).exp();
                out[at(k)] = e;
                s += e;
            }
            for k in 0..ext {
                out[at(k)] /= s;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn log_softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, ext, inner) = axis_split(x.shape(), axis)?;
    let mut out = x.data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * ext + k) * inner + i;
            let m = (0..ext).map(|k| out[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..ext).map(|k| (out[at(k)] - m).exp()).sum::<f64>().ln();
            for k in 0..ext {
                out[at(k)] -= lse;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::Usage("concat of nothing".into()))?;
    let rank = first.rank();
    for p in parts {
        if p.rank() != rank
            || p.shape().iter().enumerate().any(|(a, &e)| a != axis && e != first.shape()[a])
        {
            return Err(config_err!(
                "concat extent mismatch on non-axis dims: {:?} vs {:?}",
                p.shape(),
                first.shape()
            ));
        }
    }
    let (outer, _, inner) = axis_split(first.shape(), axis)?;
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(&shape, out)
}

/// `[start, start+len)` along `axis`.
pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let (outer, ext, inner) = axis_split(x.shape(), axis)?;
    if len == 0 || start + len > ext {
        return Err(config_err!("narrow {start}+{len} exceeds extent {ext}"));
    }
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let s = (o * ext + start) * inner;
        out.extend_from_slice(&x.data()[s..s + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(&shape, out)
}

/// Inverse of `narrow`: embeds `g` into zeros of `full_shape`.
pub(crate) fn narrow_backward(full_shape: &[usize], axis: usize, start: usize, g: &Tensor) -> Result<Tensor> {
    let (outer, ext, inner) = axis_split(full_shape, axis)?;
    let len = g.shape()[axis];
    let mut out = vec![0.0; full_shape.iter().product()];
    for o in 0..outer {
        let s = (o * ext + start) * inner;
        out[s..s + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::new(full_shape, out)
}

// ---------------------------------------------------------------- broadcasting

/// Same-rank broadcast: each extent pair must be equal or contain a 1.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(config_err!("broadcast needs equal ranks: {a:?} vs {b:?}"));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(config_err!("cannot broadcast {a:?} with {b:?}")),
        })
        .collect()
}

fn strides_for(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// Visits every output index with the matching flat offsets into `a` and `b`.
fn for_each_broadcast(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let sa = strides_for(a, out);
    let sb = strides_for(b, out);
    let rank = out.len();
    let total: usize = out.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..total {
        f(o, oa, ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let mut out = vec![0.0; shape.iter().product()];
    for_each_broadcast(&shape, a.shape(), b.shape(), |o, ia, ib| {
        out[o] = f(a.data()[ia], b.data()[ib]);
    });
    Tensor::new(&shape, out)
}

/// Sums `g` (broadcast shape) down to `target` by reducing broadcast axes.
pub fn reduce_to(g: &Tensor, target: &[usize]) -> Result<Tensor> {
    if g.shape() == target {
        return Ok(g.clone());
    }
    let mut out = vec![0.0; target.iter().product()];
    for_each_broadcast(g.shape(), target, target, |o, it, _| out[it] += g.data()[o]);
    Tensor::new(target, out)
}

/// Gradient of `a*b` w.r.t. `a`: reduce `g * b` to `a`'s shape.
pub(crate) fn mul_grad(g: &Tensor, other: &Tensor, target: &[usize]) -> Result<Tensor> {
    let mut out = vec![0.0; target.iter().product()];
    for_each_broadcast(g.shape(), target, other.shape(), |o, it, io| {
        out[it] += g.data()[o] * other.data()[io];
    });
    Tensor::new(target, out)
}

// ---------------------------------------------------------------- batch norm

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance, used for normalisation.
    pub var: Vec<f64>,
    /// Unbiased variance, used for the running estimate.
    pub var_unbiased: Vec<f64>,
}

pub fn channel_stats(x: &Tensor) -> Result<BatchStats> {
    let (n, c, h, w) = x.dims4()?;
    let m = n * h * w;
    if m < 2 {
        return Err(Error::DegenerateBatch(format!(
            "batch norm needs N*H*W >= 2 per channel in training, got {m}"
        )));
    }
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w].iter().sum::<f64>();
        }
        let mu = s / m as f64;
        let mut ss = 0.0;
        for b in 0..n {
            ss += x.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w]
                .iter()
                .map(|v| (v - mu) * (v - mu))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = ss / m as f64;
    }
    let var_unbiased = var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect();
    Ok(BatchStats { mean, var, var_unbiased })
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta`, per channel.
pub fn channel_affine_normalize(
    x: &Tensor,
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let mut out = x.data().to_vec();
    for b in 0..n {
        for ch in 0..c {
            let inv = 1.0 / (var[ch] + BN_EPS).sqrt();
            out[(b * c + ch) * h * w..(b * c + ch + 1) * h * w]
                .iter_mut()
                .for_each(|v| *v = gamma[ch] * (*v - mean[ch]) * inv + beta[ch]);
        }
    }
    Tensor::new(x.shape(), out)
}

// ---------------------------------------------------------------- gather

/// Picks `x[n, target, ...]` for each position of an `N×K×...` tensor; positions
/// with `None` yield 0. Output is `N×inner`.
pub fn gather_axis1(x: &Tensor, targets: &[Option<usize>]) -> Result<Tensor> {
    let (outer, k, inner) = axis_split(x.shape(), 1)?;
    if targets.len() != outer * inner {
        return Err(config_err!(
            "label count {} does not match {} positions",
            targets.len(),
            outer * inner
        ));
    }
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            if let Some(t) = targets[o * inner + i] {
                if t >= k {
                    return Err(Error::Usage(format!("class index {t} out of range for {k} classes")));
                }
                out[o * inner + i] = x.data()[(o * k + t) * inner + i];
            }
        }
    }
    Tensor::new(&[outer, inner], out)
}
