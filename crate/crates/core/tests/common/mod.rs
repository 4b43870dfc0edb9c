//! Naive reference implementations used as independent oracles.
#![allow(dead_code)]

use ffpnet::rng::{self, Rng, Stream};
use ffpnet::Tensor;

pub fn rng(seed: u64) -> Rng {
    rng::substream(seed, Stream::Check, 0xfeed)
}

pub fn randn_like(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

pub fn rand_int(rng: &mut Rng, lo: usize, hi_incl: usize) -> usize {
    use rand::RngExt;
    rng.random_range(lo..=hi_incl)
}

/// Direct nested-loop cross-correlation with zero padding.
pub fn naive_conv2d(x: &Tensor, k: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize, dil: usize) -> Tensor {
    let s = x.shape();
    let (n, cin, h, w) = (s[0], s[1], s[2], s[3]);
    let ks = k.shape();
    let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
    let ho = (h + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
    let wo = (w + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for b_ in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (oy * stride + i * dil) as isize - pad as isize;
                                let ix = (ox * stride + j * dil) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.at4(b_, ci, iy as usize, ix as usize)
                                        * k.at4(co, ci, i, j);
                                }
                            }
                        }
                    }
                    out[((b_ * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, cout, ho, wo], out).unwrap()
}

pub fn naive_maxpool(x: &Tensor, k: usize, stride: usize) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    Tensor::from_fn(&[n, c, ho, wo], |idx| {
        let ox = idx % wo;
        let oy = (idx / wo) % ho;
        let ch = (idx / (wo * ho)) % c;
        let b = idx / (wo * ho * c);
        let mut m = f64::NEG_INFINITY;
        for i in 0..k {
            for j in 0..k {
                m = m.max(x.at4(b, ch, oy * stride + i, ox * stride + j));
            }
        }
        m
    })
}

pub fn naive_gap(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    Tensor::from_fn(&[n, c, 1, 1], |idx| {
        let (b, ch) = (idx / c, idx % c);
        let mut acc = 0.0;
        for i in 0..h {
            for j in 0..w {
                acc += x.at4(b, ch, i, j);
            }
        }
        acc / (h * w) as f64
    })
}

/// Evaluates the align-corners-false sampling formula at every output position.
pub fn naive_resize(x: &Tensor, ho: usize, wo: usize, nearest: bool) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let src = |i: usize, out: usize, inp: usize| (i as f64 + 0.5) * inp as f64 / out as f64 - 0.5;
    Tensor::from_fn(&[n, c, ho, wo], |idx| {
        let ox = idx % wo;
        let oy = (idx / wo) % ho;
        let ch = (idx / (wo * ho)) % c;
        let b = idx / (wo * ho * c);
        let sy = src(oy, ho, h);
        let sx = src(ox, wo, w);
        if nearest {
            // round half down, then clamp
            let r = |v: f64, len: usize| {
                let f = v.floor();
                let i = if v - f > 0.5 { f + 1.0 } else { f };
                i.max(0.0).min((len - 1) as f64) as usize
            };
            x.at4(b, ch, r(sy, h), r(sx, w))
        } else {
            let sy = sy.max(0.0).min((h - 1) as f64);
            let sx = sx.max(0.0).min((w - 1) as f64);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (ly, lx) = (sy - y0 as f64, sx - x0 as f64);
            (1.0 - ly) * (1.0 - lx) * x.at4(b, ch, y0, x0)
                + (1.0 - ly) * lx * x.at4(b, ch, y0, x1)
                + ly * (1.0 - lx) * x.at4(b, ch, y1, x0)
                + ly * lx * x.at4(b, ch, y1, x1)
        }
    })
}

/// Block means with floor boundaries, blocks in row-major order.
pub fn naive_region_pool(x: &Tensor, g: usize) -> Tensor {
    let s = x.shape();
    let (n, f, h, w) = (s[0], s[1], s[2], s[3]);
    Tensor::from_fn(&[n, f, g * g], |idx| {
        let blk = idx % (g * g);
        let ch = (idx / (g * g)) % f;
        let b = idx / (g * g * f);
        let (br, bc) = (blk / g, blk % g);
        let mut acc = 0.0;
        let mut cnt = 0;
        for i in 0..h {
            for j in 0..w {
                if in_block(i, br, h, g) && in_block(j, bc, w, g) {
                    acc += x.at4(b, ch, i, j);
                    cnt += 1;
                }
            }
        }
        acc / cnt as f64
    })
}

fn in_block(i: usize, b: usize, len: usize, g: usize) -> bool {
    b * len / g <= i && i < (b + 1) * len / g
}

/// Chebyshev-radius boundary test by scanning every pixel pair.
pub fn brute_force_near_boundary(labels: &[i32], h: usize, w: usize, r: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for i in 0..h {
        for j in 0..w {
            let me = labels[i * w + j];
            for y in 0..h {
                for x in 0..w {
                    let d = (i as isize - y as isize).abs().max((j as isize - x as isize).abs()) as usize;
                    if d <= r && (labels[y * w + x] != me || labels[y * w + x] == 0) {
                        out[i * w + j] = true;
                    }
                }
            }
        }
    }
    out
}

/// Scalar loss `Σ w ⊙ v` with fixed random weights, so every output element
/// contributes a distinct gradient.
pub fn project<'t>(v: ffpnet::autograd::Var<'t>, seed: u64) -> ffpnet::Result<ffpnet::autograd::Var<'t>> {
    let mut r = rng(seed);
    let w = randn_like(&v.shape(), &mut r);
    Ok(v.mul(v.tape().constant(w))?.sum())
}

/// Overwrites every parameter whose name starts with `prefix` with `value`.
pub fn fill_prefix(store: &mut ffpnet::nn::ParamStore, prefix: &str, value: f64) {
    let ids: Vec<_> = store.ids_with_prefix(prefix).collect();
    assert!(!ids.is_empty(), "no parameters under {prefix}");
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = value);
    }
}

pub fn param<'a>(store: &'a ffpnet::nn::ParamStore, name: &str) -> &'a Tensor {
    store.get(store.id(name).unwrap_or_else(|| panic!("missing parameter {name}")))
}

/// Replaces zero-initialised biases and BN shifts with random values so no
/// activation sits exactly on a ReLU kink during finite differencing.
pub fn jitter_biases(store: &mut ffpnet::nn::ParamStore, seed: u64) {
    let mut r = rng(seed);
    for id in store.trainable_ids().collect::<Vec<_>>() {
        let name = store.name(id);
        if name.ends_with(".bias") || name.ends_with(".beta") {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::uniform(&shape, -0.5, 0.5, &mut r);
        }
    }
}

/// Indian Pines: (pixels, train counts at T = 200, 150, 100, 50).
pub const IP_TABLE: [(usize, [usize; 4]); 16] = [
    (46, [23, 23, 23, 23]),
    (1428, [200, 150, 100, 50]),
    (830, [200, 150, 100, 50]),
    (237, [118, 118, 100, 50]),
    (483, [200, 150, 100, 50]),
    (730, [200, 150, 100, 50]),
    (28, [14, 14, 14, 14]),
    (478, [200, 150, 100, 50]),
    (20, [10, 10, 10, 10]),
    (972, [200, 150, 100, 50]),
    (2455, [200, 150, 100, 50]),
    (593, [200, 150, 100, 50]),
    (205, [102, 102, 100, 50]),
    (1265, [200, 150, 100, 50]),
    (386, [193, 150, 100, 50]),
    (93, [46, 46, 46, 46]),
];
pub const IP_TOTALS: [usize; 4] = [2306, 1813, 1293, 693];

/// Pavia University, same layout.
pub const UP_TABLE: [(usize, [usize; 4]); 9] = [
    (6631, [200, 150, 100, 50]),
    (18649, [200, 150, 100, 50]),
    (2099, [200, 150, 100, 50]),
    (3064, [200, 150, 100, 50]),
    (1345, [200, 150, 100, 50]),
    (5029, [200, 150, 100, 50]),
    (1330, [200, 150, 100, 50]),
    (3682, [200, 150, 100, 50]),
    (947, [200, 150, 100, 50]),
];
pub const UP_TOTALS: [usize; 4] = [1800, 1350, 900, 450];
pub const THRESHOLDS: [usize; 4] = [200, 150, 100, 50];

/// Mirror index without edge repetition, by explicit bouncing.
pub fn naive_reflect(mut i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Per-block loop implementation of the region pyramid attention, reading the
/// module's parameters by name.
pub fn naive_repyatt(x: &Tensor, store: &ffpnet::nn::ParamStore, prefix: &str, cfg: &ffpnet::attn::RegionPyramidConfig) -> Tensor {
    let s = x.shape();
    let (n, f, h, w) = (s[0], s[1], s[2], s[3]);
    let mut total = vec![0.0; x.numel()];
    for (gi, group) in cfg.groups.iter().enumerate() {
        let blocks: Vec<Vec<(usize, usize)>> = match group {
            ffpnet::attn::RegionGroup::SinglePixel => (0..h * w).map(|p| vec![(p / w, p % w)]).collect(),
            ffpnet::attn::RegionGroup::Grid(g) => {
                let mut out = Vec::new();
                for br in 0..*g {
                    for bc in 0..*g {
                        let mut px = Vec::new();
                        for y in br * h / g..(br + 1) * h / g {
                            for xx in bc * w / g..(bc + 1) * w / g {
                                px.push((y, xx));
                            }
                        }
                        out.push(px);
                    }
                }
                out
            }
        };
        let gn = blocks.len();
        let mut reg = vec![0.0; n * f * gn];
        for b in 0..n {
            for c in 0..f {
                for (k, px) in blocks.iter().enumerate() {
                    let sum: f64 = px.iter().map(|&(y, xx)| x.at4(b, c, y, xx)).sum();
                    reg[(b * f + c) * gn + k] = sum / px.len() as f64;
                }
            }
        }
        let r4 = Tensor::new(&[n, f, 1, gn], reg).unwrap();
        let p = |s: &str| param(store, &format!("{prefix}.group{gi}.att.{s}")).clone();
        let hid = naive_conv2d(&r4, &p("conv3.weight"), Some(&p("conv3.bias")), 1, 1, 1).map(|v| v.max(0.0));
        let logits = naive_conv2d(&hid, &p("conv1.weight"), Some(&p("conv1.bias")), 1, 0, 1);
        let val = naive_conv2d(&r4, &p("value.weight"), Some(&p("value.bias")), 1, 0, 1);
        for b in 0..n {
            let row = &logits.data()[b * gn..(b + 1) * gn];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for c in 0..f {
                for (k, px) in blocks.iter().enumerate() {
                    let a = (row[k] - m).exp() / denom;
                    let z = a * val.at4(b, c, 0, k) + r4.at4(b, c, 0, k);
                    for &(y, xx) in px {
                        total[((b * f + c) * h + y) * w + xx] += z;
                    }
                }
            }
        }
    }
    let out: Vec<f64> = total.iter().zip(x.data()).map(|(t, v)| t * v).collect();
    Tensor::new(s, out).unwrap()
}

pub struct Brute {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub f1: Vec<f64>,
    pub iou: Vec<f64>,
    pub mean_f1: f64,
    pub miou: f64,
}

/// Recomputes every metric by scanning an explicit list of (truth, pred)
/// pairs.
pub fn brute(pairs: &[(i32, i32)], k: i32) -> Brute {
    let n = pairs.len() as f64;
    let count = |f: &dyn Fn(&(i32, i32)) -> bool| pairs.iter().filter(|p| f(p)).count() as f64;
    let oa = count(&|&(t, p)| t == p) / n;
    let mut recalls = Vec::new();
    let mut pe = 0.0;
    let (mut f1, mut iou) = (Vec::new(), Vec::new());
    let (mut f1_sum, mut iou_sum, mut present) = (0.0, 0.0, 0.0);
    for c in 1..=k {
        let tp = count(&|&(t, p)| t == c && p == c);
        let fn_ = count(&|&(t, p)| t == c && p != c);
        let fp = count(&|&(t, p)| t != c && p == c);
        let truth = count(&|&(t, _)| t == c);
        let predicted = count(&|&(_, p)| p == c);
        pe += truth * predicted / (n * n);
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        let j = if tp + fp + fn_ > 0.0 { tp / (tp + fp + fn_) } else { 0.0 };
        f1.push(f);
        iou.push(j);
        if truth > 0.0 {
            recalls.push(rec);
            f1_sum += f;
            iou_sum += j;
            present += 1.0;
        }
    }
    let kappa = if pe == 1.0 { 1.0 } else { (oa - pe) / (1.0 - pe) };
    Brute { oa, aa: recalls.iter().sum::<f64>() / recalls.len() as f64, kappa, f1, iou, mean_f1: f1_sum / present, miou: iou_sum / present }
}

pub fn random_pairs(r: &mut Rng, k: i32) -> Vec<(i32, i32)> {
    use rand::RngExt;
    let n = r.random_range(1..120);
    let skew = r.random_range(0.0..1.0);
    (0..n)
        .map(|_| {
            let t = r.random_range(1..=k);
            let p = if r.random_bool(skew) { t } else { r.random_range(1..=k) };
            (t, p)
        })
        .collect()
}
