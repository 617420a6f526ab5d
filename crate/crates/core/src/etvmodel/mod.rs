//! Expected transaction value estimation.
//!
//! A feedforward scorer produces a conversion probability `p` and the
//! location/scale `(mu, sigma)` of a lognormal over the shifted purchase
//! amount. It is trained with one of three losses and turned into an ETV as
//! `p * (exp(mu + sigma^2 / 2) - 1)`.

mod gradcheck;
mod loss;
mod network;
mod predict;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::problem::{Instance, Observation};

pub use gradcheck::{analytic_gradient, grad_check, numeric_gradient};
pub use loss::{ce_mse_loss, esj_loss, loss, ziln_loss};
pub use network::{sigmoid, softplus, Dense, EsjModel, HeadOutputs, DEFAULT_HIDDEN, DEFAULT_SIGMA_MIN};
pub use predict::{etv_from_outputs, predict_etv, predict_etv_threaded};
pub use train::{
    load_checkpoint, save_checkpoint, train, write_train_log, Checkpoint, EpochRecord, TrainConfig, Trained,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Entire-space joint mixture likelihood.
    Esj,
    /// Zero-inflated lognormal.
    Ziln,
    /// Cross-entropy plus MSE on log labels.
    CeMse,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Esj, LossKind::Ziln, LossKind::CeMse];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Esj => "esj",
            LossKind::Ziln => "ziln",
            LossKind::CeMse => "ce_mse",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "esj" => Ok(LossKind::Esj),
            "ziln" => Ok(LossKind::Ziln),
            "ce_mse" | "cemse" | "mse" => Ok(LossKind::CeMse),
            other => Err(Error::Config(format!("unknown loss kind {other:?} (expected esj, ziln or ce_mse)"))),
        }
    }
}

/// Observations paired with their concatenated model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub observations: Vec<Observation>,
}

impl Batch {
    pub fn from_instance(instance: &Instance, observations: &[Observation]) -> crate::Result<Self> {
        let inputs = observations.iter().map(|o| pair_input(instance, o.user, o.fund)).collect::<crate::Result<_>>()?;
        Ok(Self { inputs, observations: observations.to_vec() })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// `concat(user_features, fund_features)` for one pair.
pub fn pair_input(instance: &Instance, user: usize, fund: usize) -> crate::Result<Vec<f64>> {
    let u =
        instance.users().get(user).ok_or_else(|| Error::Shape(format!("observation refers to unknown user {user}")))?;
    let f =
        instance.funds().get(fund).ok_or_else(|| Error::Shape(format!("observation refers to unknown fund {fund}")))?;
    Ok(u.features.iter().chain(&f.features).copied().collect())
}
