//! Feedforward trunk with three scalar heads and hand-written backprop.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etvmodel::LossKind;

pub const DEFAULT_SIGMA_MIN: f64 = 0.05;
pub const DEFAULT_HIDDEN: [usize; 2] = [32, 16];

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Affine layer `y = W x + b`, weights row-major `[outputs x inputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let std = (2.0 / (inputs + outputs) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs).zip(&self.bias)) {
            *o = b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::Shape(format!(
                "dense layer {}x{} has {} weights and {} biases",
                self.outputs,
                self.inputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// Conversion probability, log-amount location and scale for one user-fund pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutputs {
    pub p: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Pre-activation head values; the losses are differentiated with respect to these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct HeadLogits {
    pub p_logit: f64,
    pub mu: f64,
    pub sigma_raw: f64,
}

impl HeadLogits {
    pub fn outputs(&self, sigma_min: f64) -> HeadOutputs {
        HeadOutputs { p: sigmoid(self.p_logit), mu: self.mu, sigma: softplus(self.sigma_raw) + sigma_min }
    }
}

/// Three-head scorer over `concat(user_features, fund_features)`.
///
/// Hidden layers use tanh. `p = sigmoid(.)`, `mu` is affine and
/// `sigma = softplus(.) + sigma_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsjModel {
    pub user_dim: usize,
    pub fund_dim: usize,
    pub sigma_min: f64,
    pub loss_kind: LossKind,
    pub trunk: Vec<Dense>,
    pub head_p: Dense,
    pub head_mu: Dense,
    pub head_sigma: Dense,
}

/// Activations kept from a forward pass for backprop.
pub(crate) struct ForwardCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of trunk layer `l`.
    acts: Vec<Vec<f64>>,
}

impl EsjModel {
    /// Glorot-initialised model with zero biases.
    pub fn new<R: Rng>(
        user_dim: usize,
        fund_dim: usize,
        hidden: &[usize],
        sigma_min: f64,
        loss_kind: LossKind,
        rng: &mut R,
    ) -> Result<Self> {
        if sigma_min.is_nan() || sigma_min <= 0.0 || sigma_min.is_infinite() {
            return Err(Error::Config(format!("sigma_min must be positive, got {sigma_min}")));
        }
        if hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut width = user_dim + fund_dim;
        for &h in hidden {
            trunk.push(Dense::glorot(width, h, rng));
            width = h;
        }
        Ok(Self {
            user_dim,
            fund_dim,
            sigma_min,
            loss_kind,
            trunk,
            head_p: Dense::glorot(width, 1, rng),
            head_mu: Dense::glorot(width, 1, rng),
            head_sigma: Dense::glorot(width, 1, rng),
        })
    }

    /// Same architecture with every weight and bias zero.
    pub fn zeroed(user_dim: usize, fund_dim: usize, hidden: &[usize], sigma_min: f64, loss_kind: LossKind) -> Self {
        let mut trunk = Vec::new();
        let mut width = user_dim + fund_dim;
        for &h in hidden {
            trunk.push(Dense::zeros(width, h));
            width = h;
        }
        Self {
            user_dim,
            fund_dim,
            sigma_min,
            loss_kind,
            trunk,
            head_p: Dense::zeros(width, 1),
            head_mu: Dense::zeros(width, 1),
            head_sigma: Dense::zeros(width, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.user_dim + self.fund_dim
    }

    fn hidden_width(&self) -> usize {
        self.trunk.last().map_or(self.input_dim(), |l| l.outputs)
    }

    /// Structural consistency of layer widths, used after deserializing.
    pub fn check(&self) -> Result<()> {
        let mut width = self.input_dim();
        for layer in &self.trunk {
            layer.check()?;
            if layer.inputs != width {
                return Err(Error::Shape(format!(
                    "trunk layer expects {} inputs, previous width {width}",
                    layer.inputs
                )));
            }
            width = layer.outputs;
        }
        for head in [&self.head_p, &self.head_mu, &self.head_sigma] {
            head.check()?;
            if head.inputs != width || head.outputs != 1 {
                return Err(Error::Shape(format!("head is {}x{}, expected 1x{width}", head.outputs, head.inputs)));
            }
        }
        if self.sigma_min.is_nan() || self.sigma_min <= 0.0 {
            return Err(Error::Config(format!("sigma_min must be positive, got {}", self.sigma_min)));
        }
        Ok(())
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.trunk
            .iter()
            .flat_map(Dense::params)
            .chain(self.head_p.params())
            .chain(self.head_mu.params())
            .chain(self.head_sigma.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.trunk
            .iter_mut()
            .flat_map(Dense::params_mut)
            .chain(self.head_p.params_mut())
            .chain(self.head_mu.params_mut())
            .chain(self.head_sigma.params_mut())
    }

    pub fn n_params(&self) -> usize {
        self.params().count()
    }

    /// A model of identical shape with all parameters zero, used as a gradient buffer.
    pub(crate) fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.params_mut().for_each(|p| *p = 0.0);
        z
    }

    pub(crate) fn forward_cached(&self, input: &[f64]) -> (HeadLogits, ForwardCache) {
        let mut acts = Vec::with_capacity(self.trunk.len() + 1);
        acts.push(input.to_vec());
        for layer in &self.trunk {
            let mut out = vec![0.0; layer.outputs];
            layer.forward_into(acts.last().expect("input present"), &mut out);
            out.iter_mut().for_each(|a| *a = a.tanh());
            acts.push(out);
        }
        let h = acts.last().expect("input present");
        let mut scalar = [0.0];
        self.head_p.forward_into(h, &mut scalar);
        let p_logit = scalar[0];
        self.head_mu.forward_into(h, &mut scalar);
        let mu = scalar[0];
        self.head_sigma.forward_into(h, &mut scalar);
        let sigma_raw = scalar[0];
        (HeadLogits { p_logit, mu, sigma_raw }, ForwardCache { acts })
    }

    pub(crate) fn logits(&self, input: &[f64]) -> HeadLogits {
        self.forward_cached(input).0
    }

    /// Head outputs for a concatenated input vector.
    pub fn forward_input(&self, input: &[f64]) -> Result<HeadOutputs> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!("model expects {} inputs, got {}", self.input_dim(), input.len())));
        }
        Ok(self.logits(input).outputs(self.sigma_min))
    }

    /// Head outputs for one user-fund pair.
    pub fn forward(&self, user_features: &[f64], fund_features: &[f64]) -> Result<HeadOutputs> {
        if user_features.len() != self.user_dim || fund_features.len() != self.fund_dim {
            return Err(Error::Shape(format!(
                "model expects {}+{} features, got {}+{}",
                self.user_dim,
                self.fund_dim,
                user_features.len(),
                fund_features.len()
            )));
        }
        let input: Vec<f64> = user_features.iter().chain(fund_features).copied().collect();
        Ok(self.logits(&input).outputs(self.sigma_min))
    }

    /// Accumulates parameter gradients into `grad` given loss derivatives
    /// with respect to the three head logits.
    pub(crate) fn backward(&self, cache: &ForwardCache, d: HeadLogits, grad: &mut EsjModel) {
        let h = cache.acts.last().expect("input present");
        let width = self.hidden_width();
        let mut dh = vec![0.0; width];
        for (head, ghead, dz) in [
            (&self.head_p, &mut grad.head_p, d.p_logit),
            (&self.head_mu, &mut grad.head_mu, d.mu),
            (&self.head_sigma, &mut grad.head_sigma, d.sigma_raw),
        ] {
            if dz == 0.0 {
                continue;
            }
            ghead.bias[0] += dz;
            for k in 0..width {
                ghead.weights[k] += dz * h[k];
                dh[k] += dz * head.weights[k];
            }
        }
        for (l, layer) in self.trunk.iter().enumerate().rev() {
            let out = &cache.acts[l + 1];
            let inp = &cache.acts[l];
            let da: Vec<f64> = dh.iter().zip(out).map(|(g, a)| g * (1.0 - a * a)).collect();
            let glayer = &mut grad.trunk[l];
            let mut dprev = vec![0.0; layer.inputs];
            for (o, &dao) in da.iter().enumerate() {
                if dao == 0.0 {
                    continue;
                }
                glayer.bias[o] += dao;
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut glayer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for k in 0..layer.inputs {
                    grow[k] += dao * inp[k];
                    dprev[k] += dao * row[k];
                }
            }
            dh = dprev;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_model_outputs() {
        let m = EsjModel::zeroed(3, 2, &DEFAULT_HIDDEN, DEFAULT_SIGMA_MIN, LossKind::Esj);
        let out = m.forward(&[1.0, -2.0, 3.0], &[0.5, 0.5]).unwrap();
        assert_eq!(out.p, 0.5);
        assert_eq!(out.mu, 0.0);
        assert!((out.sigma - (std::f64::consts::LN_2 + DEFAULT_SIGMA_MIN)).abs() < 1e-15);
    }

    #[test]
    fn zero_trunk_ignores_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = EsjModel::new(2, 1, &[4], DEFAULT_SIGMA_MIN, LossKind::Esj, &mut rng).unwrap();
        for layer in &mut m.trunk {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.3);
        }
        let a = m.forward(&[1.0, 2.0], &[3.0]).unwrap();
        let b = m.forward(&[-5.0, 0.0], &[9.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            EsjModel::new(4, 3, &DEFAULT_HIDDEN, DEFAULT_SIGMA_MIN, LossKind::Esj, &mut rng).unwrap()
        };
        let (a, b) = (build(), build());
        assert_eq!(a, b);
        let x = [0.1, 0.2, -0.3, 0.4];
        let f = [1.0, -1.0, 0.5];
        assert_eq!(a.forward(&x, &f).unwrap(), b.forward(&x, &f).unwrap());
    }

    #[test]
    fn output_ranges_hold_for_extreme_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = EsjModel::new(2, 1, &[8], DEFAULT_SIGMA_MIN, LossKind::Esj, &mut rng).unwrap();
        for x in [-1e3, -10.0, 0.0, 10.0, 1e3] {
            let out = m.forward(&[x, -x], &[x]).unwrap();
            // saturates to exactly 0 or 1 only once the logit leaves f64 range
            assert!((0.0..=1.0).contains(&out.p));
            assert!(out.sigma >= DEFAULT_SIGMA_MIN);
            assert!(out.mu.is_finite());
        }
    }

    #[test]
    fn shape_errors() {
        let m = EsjModel::zeroed(2, 1, &[3], DEFAULT_SIGMA_MIN, LossKind::Esj);
        assert!(m.forward(&[1.0], &[1.0]).is_err());
        assert!(m.forward_input(&[1.0; 4]).is_err());
        let mut broken = m.clone();
        broken.head_mu = Dense::zeros(5, 1);
        assert!(broken.check().is_err());
        assert!(m.check().is_ok());
    }

    #[test]
    fn stable_activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }
}
