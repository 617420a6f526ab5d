//! Batch losses over head outputs, and their per-sample gradients with
//! respect to the head logits.
//!
//! The public functions work on `(p, mu, sigma)` directly and are what
//! evaluation and the finite-difference checker use. Training goes through
//! [`sample_loss_grad`], which works on logits for numerical stability.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::etvmodel::network::{sigmoid, softplus, HeadLogits, HeadOutputs};
use crate::etvmodel::LossKind;
use crate::problem::Observation;

/// `0.5 * ln(2 pi)`
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn batch_mean(
    batch: &[Observation],
    outputs: &[HeadOutputs],
    per_sample: impl Fn(&Observation, &HeadOutputs) -> f64,
) -> Result<f64> {
    if batch.len() != outputs.len() {
        return Err(Error::Shape(format!("{} observations but {} model outputs", batch.len(), outputs.len())));
    }
    if batch.is_empty() {
        return Err(Error::EmptyData("loss over an empty batch".into()));
    }
    let total: f64 = batch.iter().zip(outputs).map(|(o, h)| per_sample(o, h)).sum();
    let loss = total / batch.len() as f64;
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss(loss))
    }
}

/// Lognormal negative log-likelihood of a positive sample's log label.
fn lognormal_nll(obs: &Observation, h: &HeadOutputs) -> f64 {
    let v = obs.log_label();
    let y_v = obs.shifted_amount();
    (2.0 * PI).sqrt().ln() + h.sigma.ln() + y_v.ln() + (v - h.mu).powi(2) / (2.0 * h.sigma * h.sigma)
}

fn cross_entropy(obs: &Observation, p: f64) -> f64 {
    if obs.converted {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Entire-space joint loss: positives contribute `-log(p * LN(v; mu, sigma))`,
/// negatives `-log(1 - p + p * N(0; mu, sigma))`.
pub fn esj_loss(batch: &[Observation], outputs: &[HeadOutputs]) -> Result<f64> {
    batch_mean(batch, outputs, |obs, h| {
        if obs.converted {
            -h.p.ln() + lognormal_nll(obs, h)
        } else {
            let density_at_zero = (-(h.mu * h.mu) / (2.0 * h.sigma * h.sigma)).exp() / ((2.0 * PI).sqrt() * h.sigma);
            -(1.0 - h.p + h.p * density_at_zero).ln()
        }
    })
}

/// Zero-inflated lognormal: cross-entropy everywhere, lognormal NLL on positives only.
pub fn ziln_loss(batch: &[Observation], outputs: &[HeadOutputs]) -> Result<f64> {
    batch_mean(batch, outputs, |obs, h| {
        let ce = cross_entropy(obs, h.p);
        if obs.converted {
            ce + lognormal_nll(obs, h)
        } else {
            ce
        }
    })
}

/// Cross-entropy plus squared error of `mu` against the log label on every sample.
pub fn ce_mse_loss(batch: &[Observation], outputs: &[HeadOutputs]) -> Result<f64> {
    batch_mean(batch, outputs, |obs, h| cross_entropy(obs, h.p) + (h.mu - obs.log_label()).powi(2))
}

pub fn loss(kind: LossKind, batch: &[Observation], outputs: &[HeadOutputs]) -> Result<f64> {
    match kind {
        LossKind::Esj => esj_loss(batch, outputs),
        LossKind::Ziln => ziln_loss(batch, outputs),
        LossKind::CeMse => ce_mse_loss(batch, outputs),
    }
}

/// Per-sample loss and its derivatives with respect to the head logits.
pub(crate) fn sample_loss_grad(kind: LossKind, obs: &Observation, z: HeadLogits, sigma_min: f64) -> (f64, HeadLogits) {
    let p = sigmoid(z.p_logit);
    let sigma = softplus(z.sigma_raw) + sigma_min;
    let dsigma_draw = sigmoid(z.sigma_raw);
    let v = obs.log_label();
    let mu = z.mu;

    let positive_lognormal = || {
        let r = v - mu;
        let s2 = sigma * sigma;
        let nll = HALF_LN_2PI + sigma.ln() + obs.shifted_amount().ln() + r * r / (2.0 * s2);
        let dmu = -r / s2;
        let dsigma = 1.0 / sigma - r * r / (s2 * sigma);
        (nll, dmu, dsigma)
    };

    match (kind, obs.converted) {
        (LossKind::Esj | LossKind::Ziln, true) => {
            let (nll, dmu, dsigma) = positive_lognormal();
            let loss = softplus(-z.p_logit) + nll;
            (loss, HeadLogits { p_logit: p - 1.0, mu: dmu, sigma_raw: dsigma * dsigma_draw })
        }
        (LossKind::Esj, false) => {
            // -log(1 - p + p*phi) = softplus(z) - softplus(z + log phi)
            let s2 = sigma * sigma;
            let log_phi = -(mu * mu) / (2.0 * s2) - sigma.ln() - HALF_LN_2PI;
            let shifted = z.p_logit + log_phi;
            let loss = softplus(z.p_logit) - softplus(shifted);
            let w = sigmoid(shifted);
            let dlog_phi_dmu = -mu / s2;
            let dlog_phi_dsigma = mu * mu / (s2 * sigma) - 1.0 / sigma;
            (loss, HeadLogits { p_logit: p - w, mu: -w * dlog_phi_dmu, sigma_raw: -w * dlog_phi_dsigma * dsigma_draw })
        }
        (LossKind::Ziln, false) => (softplus(z.p_logit), HeadLogits { p_logit: p, mu: 0.0, sigma_raw: 0.0 }),
        (LossKind::CeMse, converted) => {
            let ce = if converted { softplus(-z.p_logit) } else { softplus(z.p_logit) };
            let y = if converted { 1.0 } else { 0.0 };
            let r = mu - v;
            (ce + r * r, HeadLogits { p_logit: p - y, mu: 2.0 * r, sigma_raw: 0.0 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn pos(amount: f64) -> Observation {
        Observation::new(0, 0, true, amount).unwrap()
    }

    fn neg() -> Observation {
        Observation::new(0, 0, false, 0.0).unwrap()
    }

    fn out(p: f64, mu: f64, sigma: f64) -> HeadOutputs {
        HeadOutputs { p, mu, sigma }
    }

    #[test]
    fn negative_with_vanishing_p_costs_nothing() {
        let l = esj_loss(&[neg()], &[out(1e-300, 0.3, 1.0)]).unwrap();
        assert!(l.abs() < 1e-12);
        let l = ziln_loss(&[neg(), neg()], &[out(1e-300, 5.0, 1.0), out(1e-300, -2.0, 0.1)]).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn ziln_symmetric_cross_entropy() {
        // mu = v on the positive and a negative whose regression term is absent
        let p = pos(E - 1.0);
        let sigma = 1.0 / (2.0 * PI).sqrt();
        let l = ziln_loss(&[p, neg()], &[out(0.5, 1.0, sigma), out(0.5, 0.0, sigma)]).unwrap();
        // CE part log 2; the positive adds lognormal NLL 1, averaged over two samples
        assert!((l - (std::f64::consts::LN_2 + 1.0 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn ce_mse_cases() {
        let p = pos(E - 1.0);
        let l = ce_mse_loss(&[p, neg()], &[out(1.0, 1.0, 1.0), out(0.0, 0.0, 1.0)]).unwrap();
        assert_eq!(l, 0.0);
        let l = ce_mse_loss(&[p], &[out(1.0, 2.0, 1.0)]).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_and_shape_errors() {
        assert!(matches!(ziln_loss(&[pos(3.0)], &[out(0.0, 0.0, 1.0)]), Err(Error::NonFiniteLoss(_))));
        assert!(matches!(esj_loss(&[pos(3.0)], &[]), Err(Error::Shape(_))));
        assert!(matches!(esj_loss(&[], &[]), Err(Error::EmptyData(_))));
    }

    #[test]
    fn logit_path_matches_probability_path() {
        let samples = [pos(12.0), pos(0.4), neg(), neg()];
        let logits = [(0.3, 2.1, -0.4), (-1.2, 0.1, 0.9), (0.8, 1.5, -2.0), (-3.0, -0.7, 0.2)];
        for kind in [LossKind::Esj, LossKind::Ziln, LossKind::CeMse] {
            for (obs, &(zp, mu, zs)) in samples.iter().zip(&logits) {
                let z = HeadLogits { p_logit: zp, mu, sigma_raw: zs };
                let (l, _) = sample_loss_grad(kind, obs, z, 0.05);
                let expected = loss(kind, std::slice::from_ref(obs), &[z.outputs(0.05)]).unwrap();
                assert!((l - expected).abs() < 1e-12 * (1.0 + expected.abs()), "{kind:?} {l} vs {expected}");
            }
        }
    }
}
