use crate::error::Result;
use crate::etvmodel::network::{EsjModel, HeadOutputs};
use crate::etvmodel::{pair_input, LossKind};
use crate::problem::{EtvMatrix, Instance};

/// `p * (exp(mu + sigma^2/2) - 1)`, clamped below at zero.
#[inline]
pub fn etv_from_outputs(h: HeadOutputs) -> f64 {
    let etv = h.p * (h.mu + 0.5 * h.sigma * h.sigma).exp_m1();
    etv.max(0.0)
}

fn pair_etv(model: &EsjModel, input: &[f64]) -> Result<f64> {
    let mut h = model.forward_input(input)?;
    // the CE+MSE baseline never trains its scale head
    if model.loss_kind == LossKind::CeMse {
        h.sigma = 0.0;
    }
    Ok(etv_from_outputs(h))
}

fn predict_rows(model: &EsjModel, instance: &Instance, rows: std::ops::Range<usize>) -> Result<Vec<f64>> {
    let k = instance.n_funds();
    let mut out = Vec::with_capacity(rows.len() * k);
    for i in rows {
        for j in 0..k {
            out.push(pair_etv(model, &pair_input(instance, i, j)?)?);
        }
    }
    Ok(out)
}

/// ETV for every user-fund pair of an instance.
pub fn predict_etv(model: &EsjModel, instance: &Instance) -> Result<EtvMatrix> {
    predict_etv_threaded(model, instance, 1)
}

/// As [`predict_etv`], splitting users across up to `threads` scoped threads.
/// The result does not depend on the thread count.
pub fn predict_etv_threaded(model: &EsjModel, instance: &Instance, threads: usize) -> Result<EtvMatrix> {
    let n = instance.n_users();
    let threads = threads.clamp(1, n.max(1));
    let chunk = n.div_ceil(threads).max(1);
    let parts: Vec<Result<Vec<f64>>> = if threads == 1 {
        vec![predict_rows(model, instance, 0..n)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| s.spawn(move || predict_rows(model, instance, start..(start + chunk).min(n))))
                .collect();
            handles.into_iter().map(|h| h.join().expect("prediction thread panicked")).collect()
        })
    };
    let mut values = Vec::with_capacity(n * instance.n_funds());
    for part in parts {
        values.extend(part?);
    }
    EtvMatrix::new(n, instance.n_funds(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(p: f64, mu: f64, sigma: f64) -> HeadOutputs {
        HeadOutputs { p, mu, sigma }
    }

    #[test]
    fn formula_cases() {
        assert_eq!(etv_from_outputs(h(0.0, 3.0, 1.0)), 0.0);
        assert!(etv_from_outputs(h(1.0, 0.0, 1e-9)).abs() < 1e-15);
        assert!((etv_from_outputs(h(0.5, 101f64.ln(), 0.0)) - 50.0).abs() < 1e-12);
        // exp(mu + s^2/2) - 1 < 0 for sufficiently negative mu
        assert_eq!(etv_from_outputs(h(0.7, -2.0, 0.1)), 0.0);
    }

    #[test]
    fn monotone_in_p_and_mu() {
        let base = etv_from_outputs(h(0.3, 1.0, 0.5));
        assert!(etv_from_outputs(h(0.31, 1.0, 0.5)) > base);
        assert!(etv_from_outputs(h(0.3, 1.01, 0.5)) > base);
    }
}
