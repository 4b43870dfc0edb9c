use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::ffpt::Array;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    Poly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// SGD momentum, or Adam's β1.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_power")]
    pub poly_power: f64,
}

fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_schedule() -> Schedule {
    Schedule::Constant
}
fn default_momentum() -> f64 {
    0.9
}
fn default_power() -> f64 {
    0.9
}

impl OptimizerConfig {
    pub fn sgd(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr,
            momentum,
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay,
            schedule: Schedule::Poly,
            poly_power: default_power(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, momentum: 0.9, schedule: Schedule::Constant, weight_decay: 0.0, ..Self::sgd(lr, 0.9, 0.0) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, v: f64| Err(Error::Config(format!("optimizer.{field} out of range: {v}")));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", self.lr);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", self.momentum);
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", self.beta2);
        }
        if !(self.eps > 0.0) {
            return bad("eps", self.eps);
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", self.weight_decay);
        }
        if !(self.poly_power > 0.0 && self.poly_power.is_finite()) {
            return bad("poly_power", self.poly_power);
        }
        Ok(())
    }

    /// Learning rate for iteration `iter` of `max_iter`.
    pub fn lr_at(&self, iter: usize, max_iter: usize) -> Result<f64> {
        match self.schedule {
            Schedule::Constant => Ok(self.lr),
            Schedule::Poly => poly_lr(self.lr, iter, max_iter, self.poly_power),
        }
    }
}

/// `base · (1 − iter/max_iter)^power`.
pub fn poly_lr(base: f64, iter: usize, max_iter: usize, power: f64) -> Result<f64> {
    if max_iter == 0 {
        return Err(Error::Config("poly schedule needs max_iter > 0".into()));
    }
    if iter > max_iter {
        return Err(Error::Usage(format!("iteration {iter} beyond max_iter {max_iter}")));
    }
    Ok(base * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

/// `v ← μ·v + g + λ·p;  p ← p − lr·v`.
pub fn sgd_update(param: &mut [f64], grad: &[f64], velocity: &mut [f64], momentum: f64, weight_decay: f64, lr: f64) {
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
}

/// Bias-corrected Adam at 1-based step `t`, with coupled L2 decay.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &OptimizerConfig, lr: f64) {
    let (b1, b2) = (cfg.momentum, cfg.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i] + cfg.weight_decay * param[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        param[i] -= lr * mh / (vh.sqrt() + cfg.eps);
    }
}

#[derive(Debug, Clone)]
struct Moments {
    first: Tensor,
    second: Option<Tensor>,
}

/// Optimizer state over the trainable parameters of one store.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub step_count: u64,
    moments: HashMap<ParamId, Moments>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer { config, step_count: 0, moments: HashMap::new() })
    }

    /// Applies one update to every trainable parameter; missing gradients
    /// count as zero.
    pub fn step(&mut self, store: &mut ParamStore, grads: &HashMap<ParamId, Tensor>, lr: f64) -> Result<()> {
        self.step_count += 1;
        let ids: Vec<ParamId> = store.trainable_ids().collect();
        for id in ids {
            let shape = store.get(id).shape().to_vec();
            let zero;
            let g = match grads.get(&id) {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(&shape);
                    &zero
                }
            };
            if g.shape() != shape.as_slice() {
                return Err(Error::Usage(format!("gradient for {} has shape {:?}, expected {:?}", store.name(id), g.shape(), shape)));
            }
            let adam = self.config.kind == OptimizerKind::Adam;
            let mom = self.moments.entry(id).or_insert_with(|| Moments { first: Tensor::zeros(&shape), second: adam.then(|| Tensor::zeros(&shape)) });
            let p = store.get_mut(id).data_mut();
            match self.config.kind {
                OptimizerKind::Sgd => sgd_update(p, g.data(), mom.first.data_mut(), self.config.momentum, self.config.weight_decay, lr),
                OptimizerKind::Adam => {
                    let second = mom.second.as_mut().expect("adam keeps a second moment");
                    adam_update(p, g.data(), mom.first.data_mut(), second.data_mut(), self.step_count, &self.config, lr)
                }
            }
        }
        Ok(())
    }

    /// Writes `step_count.ffpt` and one file per moment buffer into `dir`.
    pub fn save(&self, store: &ParamStore, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Array::from_tensor(&Tensor::scalar(self.step_count as f64)).write(&dir.join("step_count.ffpt"))?;
        let mut ids: Vec<_> = self.moments.keys().copied().collect();
        ids.sort_by_key(|id| id.index());
        for id in ids {
            let m = &self.moments[&id];
            let name = store.name(id);
            Array::from_tensor(&m.first).write(&dir.join(format!("{name}.m1.ffpt")))?;
            if let Some(v) = &m.second {
                Array::from_tensor(v).write(&dir.join(format!("{name}.m2.ffpt")))?;
            }
        }
        Ok(())
    }
}
