use rand::RngExt;

use crate::error::{config_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

fn dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(config_err!("patch must be C×H×W, got {s:?}")),
    }
}

fn remap(x: &Tensor, oh: usize, ow: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Result<Tensor> {
    let (c, h, w) = dims(x)?;
    let mut out = Vec::with_capacity(x.numel());
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let (si, sj) = src(i, j);
                out.push(x.data()[(ch * h + si) * w + sj]);
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

/// Mirror left to right.
pub fn flip_h(x: &Tensor) -> Result<Tensor> {
    let (_, h, w) = dims(x)?;
    remap(x, h, w, |i, j| (i, w - 1 - j))
}

/// Mirror top to bottom.
pub fn flip_v(x: &Tensor) -> Result<Tensor> {
    let (_, h, w) = dims(x)?;
    remap(x, h, w, |i, j| (h - 1 - i, j))
}

/// Counter-clockwise quarter turn.
pub fn rot90(x: &Tensor) -> Result<Tensor> {
    let (_, h, w) = dims(x)?;
    remap(x, w, h, |i, j| (j, w - 1 - i))
}

/// An element of the dihedral group acting on square patches: optional
/// horizontal flip, then optional vertical flip, then `quarter_turns`
/// counter-clockwise rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct D4 {
    pub flip_h: bool,
    pub flip_v: bool,
    pub quarter_turns: u8,
}

impl D4 {
    pub fn random(rng: &mut Rng) -> Self {
        D4 { flip_h: rng.random_bool(0.5), flip_v: rng.random_bool(0.5), quarter_turns: rng.random_range(0..4u8) }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (_, h, w) = dims(x)?;
        if self.quarter_turns % 2 == 1 && h != w {
            return Err(config_err!("quarter-turn rotation of a non-square {h}x{w} patch"));
        }
        let mut y = x.clone();
        if self.flip_h {
            y = flip_h(&y)?;
        }
        if self.flip_v {
            y = flip_v(&y)?;
        }
        for _ in 0..self.quarter_turns % 4 {
            y = rot90(&y)?;
        }
        Ok(y)
    }

    /// Undoes `apply`.
    pub fn apply_inverse(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for _ in 0..(4 - self.quarter_turns % 4) % 4 {
            y = rot90(&y)?;
        }
        if self.flip_v {
            y = flip_v(&y)?;
        }
        if self.flip_h {
            y = flip_h(&y)?;
        }
        Ok(y)
    }

    pub fn all() -> Vec<D4> {
        let mut out = Vec::with_capacity(16);
        for flip_h in [false, true] {
            for flip_v in [false, true] {
                for quarter_turns in 0..4 {
                    out.push(D4 { flip_h, flip_v, quarter_turns });
                }
            }
        }
        out
    }
}

/// Random flips and rotation; the identity when disabled.
pub fn augment(patch: &Tensor, rng: &mut Rng, enabled: bool) -> Result<Tensor> {
    if !enabled {
        return Ok(patch.clone());
    }
    D4::random(rng).apply(patch)
}
