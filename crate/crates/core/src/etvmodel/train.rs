//! Mini-batch gradient descent with momentum and early stopping on validation loss.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etvmodel::loss::sample_loss_grad;
use crate::etvmodel::network::{EsjModel, DEFAULT_HIDDEN, DEFAULT_SIGMA_MIN};
use crate::etvmodel::{pair_input, LossKind};
use crate::problem::{Instance, Observation};
use crate::seed::{self, stage, DEFAULT_SEED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub sigma_min: f64,
    pub hidden: Vec<usize>,
    pub validation_fraction: f64,
    /// Rescale each mini-batch gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 512,
            max_epochs: 40,
            early_stop_patience: 4,
            seed: DEFAULT_SEED,
            loss_kind: LossKind::Esj,
            sigma_min: DEFAULT_SIGMA_MIN,
            hidden: DEFAULT_HIDDEN.to_vec(),
            validation_fraction: 0.1,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return bad("batch_size, max_epochs and early_stop_patience must be positive");
        }
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return bad("sigma_min must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: EsjModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn mean_val_loss(model: &EsjModel, kind: LossKind, inputs: &[Vec<f64>], obs: &[Observation]) -> f64 {
    let total: f64 =
        inputs.iter().zip(obs).map(|(x, o)| sample_loss_grad(kind, o, model.logits(x), model.sigma_min).0).sum();
    total / obs.len() as f64
}

fn inverse_softplus(y: f64) -> f64 {
    // log(e^y - 1), stable for large y
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Starts the head biases at the marginal statistics of the training labels.
fn init_head_biases(model: &mut EsjModel, kind: LossKind, obs: &[Observation]) {
    let n = obs.len() as f64;
    let positives: Vec<f64> = obs.iter().filter(|o| o.converted).map(Observation::log_label).collect();
    let rate = (positives.len() as f64 / n).clamp(1e-4, 1.0 - 1e-4);
    model.head_p.bias[0] = (rate / (1.0 - rate)).ln();

    let (mean, sd) = match kind {
        LossKind::CeMse => {
            let mean = obs.iter().map(Observation::log_label).sum::<f64>() / n;
            (mean, 1.0)
        }
        _ if positives.len() >= 2 => {
            let m = positives.iter().sum::<f64>() / positives.len() as f64;
            let var = positives.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (positives.len() - 1) as f64;
            (m, var.sqrt())
        }
        _ => (0.0, 1.0),
    };
    model.head_mu.bias[0] = mean;
    model.head_sigma.bias[0] = inverse_softplus((sd - model.sigma_min).max(0.05));
}

/// Fits a model on observations of `instance`, holding out a seeded validation
/// fraction for early stopping. Deterministic in `config.seed`.
pub fn train(instance: &Instance, observations: &[Observation], config: &TrainConfig) -> Result<Trained> {
    config.validate()?;
    if observations.len() < 2 {
        return Err(Error::EmptyData(format!("need at least 2 observations, got {}", observations.len())));
    }
    let kind = config.loss_kind;

    let mut order: Vec<usize> = (0..observations.len()).collect();
    order.shuffle(&mut seed::rng(config.seed, stage::SPLIT));
    let n_val =
        ((observations.len() as f64 * config.validation_fraction).round() as usize).clamp(1, observations.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let gather = |idx: &[usize]| -> Result<(Vec<Vec<f64>>, Vec<Observation>)> {
        let obs: Vec<Observation> = idx.iter().map(|&i| observations[i]).collect();
        let inputs = obs.iter().map(|o| pair_input(instance, o.user, o.fund)).collect::<Result<_>>()?;
        Ok((inputs, obs))
    };
    let (train_x, train_y) = gather(train_idx)?;
    let (val_x, val_y) = gather(val_idx)?;

    let mut model = EsjModel::new(
        instance.user_dim(),
        instance.fund_dim(),
        &config.hidden,
        config.sigma_min,
        kind,
        &mut seed::rng(config.seed, stage::INIT),
    )?;
    init_head_biases(&mut model, kind, &train_y);

    let mut shuffle_rng = seed::rng(config.seed, stage::SHUFFLE);
    let mut velocity = model.zeros_like();
    let mut batch_order: Vec<usize> = (0..train_y.len()).collect();
    let mut best = (mean_val_loss(&model, kind, &val_x, &val_y), model.clone(), 0usize);
    if !best.0.is_finite() {
        return Err(Error::Diverged { epoch: 0 });
    }
    let mut log = Vec::new();
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        batch_order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in batch_order.chunks(config.batch_size) {
            let mut grad = model.zeros_like();
            for &i in chunk {
                let (z, cache) = model.forward_cached(&train_x[i]);
                let (l, dz) = sample_loss_grad(kind, &train_y[i], z, model.sigma_min);
                epoch_loss += l;
                model.backward(&cache, dz, &mut grad);
            }
            let scale = 1.0 / chunk.len() as f64;
            let mut norm_sq = 0.0;
            grad.params_mut().for_each(|g| {
                *g *= scale;
                norm_sq += *g * *g;
            });
            if !norm_sq.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let clip = match config.clip_norm {
                Some(c) if norm_sq.sqrt() > c => c / norm_sq.sqrt(),
                _ => 1.0,
            };
            for ((w, v), g) in model.params_mut().zip(velocity.params_mut()).zip(grad.params()) {
                *v = config.momentum * *v - config.learning_rate * clip * g;
                *w += *v;
            }
        }
        let train_loss = epoch_loss / train_y.len() as f64;
        let val_loss = mean_val_loss(&model, kind, &val_x, &val_y);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log.push(EpochRecord { epoch, train_loss, val_loss });
        if val_loss < best.0 {
            best = (val_loss, model.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                break;
            }
        }
    }
    Ok(Trained { model: best.1, log, best_epoch: best.2 })
}

/// Model weights plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub config: TrainConfig,
    pub model: EsjModel,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, checkpoint)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)?;
    checkpoint.model.check()?;
    Ok(checkpoint)
}

/// `epoch,train_loss,val_loss`
pub fn write_train_log<W: Write>(w: W, log: &[EpochRecord]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    for rec in log {
        wtr.serialize(rec)?;
    }
    if log.is_empty() {
        wtr.write_record(["epoch", "train_loss", "val_loss"])?;
    }
    wtr.flush()?;
    Ok(())
}
