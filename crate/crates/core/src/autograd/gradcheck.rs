//! Central-difference gradient oracle.

use rand::seq::index;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Step is `rel_step * (1 + |x|)`.
    pub rel_step: f64,
    /// Upper bound on perturbed coordinates per tensor; `None` checks all of them.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { rel_step: 1e-4, max_coords_per_tensor: None, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Where the largest error occurred, e.g. `input0[3]` or `conv.weight[12]`.
    pub worst: String,
    pub coords_checked: usize,
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Checks a scalar function of one tensor. Returns the max relative error.
pub fn grad_check<F>(f: F, x0: &Tensor, rel_step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let opts = GradCheckOptions { rel_step, ..Default::default() };
    let report = grad_check_with(
        |tape, _store, xs| f(tape, xs[0]),
        std::slice::from_ref(x0),
        &ParamStore::new(),
        &opts,
    )?;
    Ok(report.max_rel_error)
}

/// Checks the gradient of a scalar function with respect to every input tensor
/// and every trainable parameter in `store`.
pub fn grad_check_with<F>(
    f: F,
    inputs: &[Tensor],
    store: &ParamStore,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &'t ParamStore, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |xs: &[Tensor], st: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&tape, st, &vars)?;
        let v = out.value();
        if !v.is_scalar() {
            return Err(Error::Usage(format!("gradcheck function must be scalar, got {:?}", v.shape())));
        }
        Ok(v.item())
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&tape, store, &vars)?;
    let grads = tape.backward(out)?;

    let mut rng = rng::stream(opts.seed, Stream::Check);
    let mut pick = |n: usize| -> Vec<usize> {
        match opts.max_coords_per_tensor {
            Some(m) if m < n => {
                let mut v = index::sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        }
    };
    let step = |x: f64| opts.rel_step * (1.0 + x.abs());
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), coords_checked: 0 };
    let mut record = |analytic: f64, numeric: f64, label: String| -> Result<()> {
        if !numeric.is_finite() {
            return Err(Error::Oracle(format!("non-finite finite difference at {label}")));
        }
        let e = rel_error(analytic, numeric);
        report.coords_checked += 1;
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(e);
            report.worst = label;
        }
        Ok(())
    };

    for (ti, (x, var)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = grads.of(*var).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        for i in pick(x.numel()) {
            let h = step(x.data()[i]);
            let mut xs = inputs.to_vec();
            xs[ti].data_mut()[i] = x.data()[i] + h;
            let fp = eval(&xs, store)?;
            xs[ti].data_mut()[i] = x.data()[i] - h;
            let fm = eval(&xs, store)?;
            record(analytic.data()[i], (fp - fm) / (2.0 * h), format!("input{ti}[{i}]"))?;
        }
    }

    let param_grads = grads.params();
    let ids: Vec<ParamId> = store.trainable_ids().collect();
    for id in ids {
        let value = store.get(id).clone();
        let analytic = param_grads.get(&id).cloned().unwrap_or_else(|| Tensor::zeros(value.shape()));
        for i in pick(value.numel()) {
            let h = step(value.data()[i]);
            let mut st = store.clone();
            st.get_mut(id).data_mut()[i] = value.data()[i] + h;
            let fp = eval(inputs, &st)?;
            st.get_mut(id).data_mut()[i] = value.data()[i] - h;
            let fm = eval(inputs, &st)?;
            record(analytic.data()[i], (fp - fm) / (2.0 * h), format!("{}[{i}]", store.name(id)))?;
        }
    }
    Ok(report)
}
