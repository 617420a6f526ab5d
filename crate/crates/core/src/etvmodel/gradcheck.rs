//! Finite-difference verification of the backprop gradients.

use crate::error::{Error, Result};
use crate::etvmodel::loss::{loss, sample_loss_grad};
use crate::etvmodel::network::{EsjModel, HeadOutputs};
use crate::etvmodel::{Batch, LossKind};

/// Gradients smaller than this are compared on an absolute scale.
const REL_ERROR_FLOOR: f64 = 1e-6;

/// Mean loss and mean parameter gradient over a batch, by backprop.
pub fn analytic_gradient(model: &EsjModel, batch: &Batch, kind: LossKind) -> Result<(f64, EsjModel)> {
    if batch.is_empty() {
        return Err(Error::EmptyData("gradient of an empty batch".into()));
    }
    let mut grad = model.zeros_like();
    let mut total = 0.0;
    for (input, obs) in batch.inputs.iter().zip(&batch.observations) {
        if input.len() != model.input_dim() {
            return Err(Error::Shape(format!("model expects {} inputs, got {}", model.input_dim(), input.len())));
        }
        let (z, cache) = model.forward_cached(input);
        let (l, dz) = sample_loss_grad(kind, obs, z, model.sigma_min);
        total += l;
        model.backward(&cache, dz, &mut grad);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.params_mut().for_each(|g| *g *= scale);
    Ok((total * scale, grad))
}

fn batch_loss(model: &EsjModel, batch: &Batch, kind: LossKind) -> Result<f64> {
    let outputs: Vec<HeadOutputs> = batch.inputs.iter().map(|x| model.forward_input(x)).collect::<Result<_>>()?;
    loss(kind, &batch.observations, &outputs)
}

/// Central differences of the probability-space batch loss, one entry per parameter
/// in [`EsjModel::params`] order.
pub fn numeric_gradient(model: &EsjModel, batch: &Batch, kind: LossKind, eps: f64) -> Result<Vec<f64>> {
    let mut probe = model.clone();
    let n = model.n_params();
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let original = *model.params().nth(idx).expect("index in range");
        *probe.params_mut().nth(idx).expect("index in range") = original + eps;
        let up = batch_loss(&probe, batch, kind)?;
        *probe.params_mut().nth(idx).expect("index in range") = original - eps;
        let down = batch_loss(&probe, batch, kind)?;
        *probe.params_mut().nth(idx).expect("index in range") = original;
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

/// Largest relative disagreement between backprop and central differences,
/// `|a - n| / max(|a|, |n|, 1e-6)` over all parameters.
pub fn grad_check(model: &EsjModel, batch: &Batch, kind: LossKind, eps: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    let (_, analytic) = analytic_gradient(model, batch, kind)?;
    let numeric = numeric_gradient(model, batch, kind, eps)?;
    Ok(analytic
        .params()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR))
        .fold(0.0, f64::max))
}
