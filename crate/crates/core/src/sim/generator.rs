//! Synthetic users, funds and outcomes drawn from a known ground-truth model.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etvmodel::sigmoid;
use crate::problem::{EtvMatrix, FundType, Instance, Observation, UserRecord, DEFAULT_MAX_RISK_LEVEL};
use crate::seed::{self, stage, DEFAULT_SEED};

/// Smallest converted log-amount; keeps every purchase strictly positive.
pub const MIN_LOG_AMOUNT: f64 = 0.01;
pub const MIN_SIGMA_TRUE: f64 = 0.05;

/// Ground-truth response surface.
///
/// `logit p = w_p . [x_u; x_f] + x_u' A_p x_f + b_p`, likewise for `mu`;
/// converted log-amounts are `Normal(mu, sigma[fund])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueModel {
    pub feature_dim: usize,
    pub w_p: Vec<f64>,
    pub b_p: f64,
    /// Row-major `d x d`, rows indexed by user feature.
    pub a_p: Vec<f64>,
    pub w_mu: Vec<f64>,
    pub b_mu: f64,
    pub a_mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

fn bilinear(a: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let d = y.len();
    x.iter().enumerate().map(|(r, xr)| xr * a[r * d..(r + 1) * d].iter().zip(y).map(|(w, v)| w * v).sum::<f64>()).sum()
}

fn affine(w: &[f64], b: f64, x: &[f64], y: &[f64]) -> f64 {
    b + w.iter().zip(x.iter().chain(y)).map(|(w, v)| w * v).sum::<f64>()
}

impl TrueModel {
    fn check(&self, n_funds: usize) -> Result<()> {
        let d = self.feature_dim;
        if self.w_p.len() != 2 * d || self.w_mu.len() != 2 * d || self.a_p.len() != d * d || self.a_mu.len() != d * d {
            return Err(Error::Config(format!("true model weights do not match feature_dim {d}")));
        }
        if self.sigma.len() != n_funds {
            return Err(Error::Config(format!("true model has {} sigmas for {n_funds} funds", self.sigma.len())));
        }
        if let Some(s) = self.sigma.iter().find(|s| !(**s >= MIN_SIGMA_TRUE && s.is_finite())) {
            return Err(Error::Config(format!("sigma_true {s} below {MIN_SIGMA_TRUE}")));
        }
        let finite = [self.b_p, self.b_mu]
            .iter()
            .chain(&self.w_p)
            .chain(&self.w_mu)
            .chain(&self.a_p)
            .chain(&self.a_mu)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("true model weights must be finite".into()));
        }
        Ok(())
    }

    pub fn p(&self, user: &[f64], fund: &[f64]) -> f64 {
        sigmoid(affine(&self.w_p, self.b_p, user, fund) + bilinear(&self.a_p, user, fund))
    }

    pub fn mu(&self, user: &[f64], fund: &[f64]) -> f64 {
        affine(&self.w_mu, self.b_mu, user, fund) + bilinear(&self.a_mu, user, fund)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Users in the evaluation population.
    pub n_users: usize,
    pub n_funds: usize,
    pub feature_dim: usize,
    /// Users in the separately drawn training population.
    pub history_users: usize,
    pub seed: u64,
    /// Relative frequency of user tolerance 0, 1, ...
    pub tolerance_weights: Vec<f64>,
    /// Relative frequency of fund risk level 0, 1, ...
    pub fund_risk_weights: Vec<f64>,
    /// Log-scale spread of fund popularity, which sets the demand split.
    pub popularity_spread: f64,
    pub p_bias: f64,
    /// Standard deviation of the additive part of the conversion logit.
    pub p_scale: f64,
    pub mu_bias: f64,
    pub mu_scale: f64,
    /// Strength of the user-by-fund term relative to the additive one.
    pub interaction: f64,
    pub sigma_range: [f64; 2],
    /// Fixed ground truth; drawn from `seed` when absent.
    pub true_model: Option<TrueModel>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            n_funds: 8,
            feature_dim: 4,
            history_users: 12_500,
            seed: DEFAULT_SEED,
            tolerance_weights: vec![0.2, 0.3, 0.3, 0.2],
            fund_risk_weights: vec![1.0, 1.0, 1.0, 1.0],
            popularity_spread: 0.5,
            p_bias: -4.0,
            p_scale: 1.0,
            mu_bias: 8.5,
            mu_scale: 0.6,
            interaction: 1.0,
            sigma_range: [0.4, 1.0],
            true_model: None,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_funds == 0 || self.feature_dim == 0 {
            return bad("n_funds and feature_dim must be positive".into());
        }
        let levels = self.tolerance_weights.len();
        if levels == 0 || levels > DEFAULT_MAX_RISK_LEVEL as usize + 1 || self.fund_risk_weights.len() != levels {
            return bad(format!(
                "tolerance_weights and fund_risk_weights need the same length in 1..={}",
                DEFAULT_MAX_RISK_LEVEL + 1
            ));
        }
        for w in [&self.tolerance_weights, &self.fund_risk_weights] {
            if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
                return bad(format!("risk weights {w:?} must be non-negative with a positive sum"));
            }
        }
        let scalars = [self.popularity_spread, self.p_scale, self.mu_scale, self.interaction];
        if scalars.iter().any(|x| !(*x >= 0.0 && x.is_finite()))
            || !self.p_bias.is_finite()
            || !self.mu_bias.is_finite()
        {
            return bad("generator scales must be finite and non-negative".into());
        }
        let [lo, hi] = self.sigma_range;
        if !(lo >= MIN_SIGMA_TRUE && hi >= lo && hi.is_finite()) {
            return bad(format!("sigma_range [{lo}, {hi}] must satisfy {MIN_SIGMA_TRUE} <= lo <= hi"));
        }
        if let Some(m) = &self.true_model {
            if m.feature_dim != self.feature_dim {
                return bad(format!("true model feature_dim {} != {}", m.feature_dim, self.feature_dim));
            }
            m.check(self.n_funds)?;
        }
        Ok(())
    }

    fn draw_true_model(&self, rng: &mut ChaCha8Rng) -> TrueModel {
        let d = self.feature_dim;
        let mut normals =
            |n: usize, sd: f64| -> Vec<f64> { (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect() };
        // each term contributes roughly `scale` standard deviations to its output
        let w_p = normals(2 * d, self.p_scale / (2.0 * d as f64).sqrt());
        let a_p = normals(d * d, self.interaction * self.p_scale / d as f64);
        let w_mu = normals(2 * d, self.mu_scale / (2.0 * d as f64).sqrt());
        let a_mu = normals(d * d, self.interaction * self.mu_scale / d as f64);
        let [lo, hi] = self.sigma_range;
        let sigma = (0..self.n_funds).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
        TrueModel { feature_dim: d, w_p, b_p: self.p_bias, a_p, w_mu, b_mu: self.mu_bias, a_mu, sigma }
    }
}

/// Fixed part of a synthetic market: the true model and the fund catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub model: TrueModel,
    pub fund_risk_levels: Vec<u32>,
    pub fund_features: Vec<Vec<f64>>,
    pub popularity: Vec<f64>,
    pub tolerance_weights: Vec<f64>,
}

impl World {
    pub fn new(config: &GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(config.seed, stage::GENERATE);
        let model = match &config.true_model {
            Some(m) => m.clone(),
            None => config.draw_true_model(&mut rng),
        };
        let levels = WeightedIndex::new(&config.fund_risk_weights).map_err(|e| Error::Config(e.to_string()))?;
        let mut fund_risk_levels: Vec<u32> = (0..config.n_funds).map(|_| levels.sample(&mut rng) as u32).collect();
        // a zero-risk fund keeps every population placeable
        if !fund_risk_levels.contains(&0) {
            let lowest = (0..config.n_funds).min_by_key(|&j| (fund_risk_levels[j], j)).expect("n_funds > 0");
            fund_risk_levels[lowest] = 0;
        }
        let fund_features = (0..config.n_funds)
            .map(|_| (0..config.feature_dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let popularity = (0..config.n_funds)
            .map(|_| (config.popularity_spread * rng.sample::<f64, _>(StandardNormal)).exp())
            .collect();
        Ok(Self {
            model,
            fund_risk_levels,
            fund_features,
            popularity,
            tolerance_weights: config.tolerance_weights.clone(),
        })
    }

    pub fn n_funds(&self) -> usize {
        self.fund_risk_levels.len()
    }

    /// Draws `n` users and builds an instance whose demands follow fund
    /// popularity and are always placeable.
    pub fn sample_instance(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Instance> {
        let tolerance = WeightedIndex::new(&self.tolerance_weights).map_err(|e| Error::Config(e.to_string()))?;
        let d = self.model.feature_dim;
        let users: Vec<UserRecord> = (0..n)
            .map(|id| {
                let features = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                UserRecord { id, risk_tolerance: tolerance.sample(rng) as u32, features }
            })
            .collect();
        let tolerances: Vec<u32> = users.iter().map(|u| u.risk_tolerance).collect();
        let demands = feasible_demands(largest_remainder(n, &self.popularity), &self.fund_risk_levels, &tolerances);
        let funds = (0..self.n_funds())
            .map(|id| FundType {
                id,
                risk_level: self.fund_risk_levels[id],
                demand: demands[id],
                features: self.fund_features[id].clone(),
            })
            .collect();
        Instance::new(users, funds)
    }

    pub fn truth(&self, instance: &Instance) -> TruthGrid {
        let (n, k) = (instance.n_users(), instance.n_funds());
        let mut p = Vec::with_capacity(n * k);
        let mut mu = Vec::with_capacity(n * k);
        for u in instance.users() {
            for f in instance.funds() {
                p.push(self.model.p(&u.features, &f.features));
                mu.push(self.model.mu(&u.features, &f.features));
            }
        }
        TruthGrid { n_users: n, n_funds: k, p, mu, sigma: self.model.sigma.clone() }
    }
}

/// Splits `total` in proportion to `weights`, rounding by largest remainder
/// (ties to the lower index) so the parts sum to `total`.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(total.saturating_sub(assigned)) {
        parts[j] += 1;
    }
    parts
}

/// Moves demand from risky funds to safer ones until every risk level can be
/// staffed: for each level `l`, demand at funds of level >= `l` may not exceed
/// the number of users with tolerance >= `l`. Needs a level-0 fund.
pub fn feasible_demands(mut demands: Vec<usize>, risk_levels: &[u32], tolerances: &[u32]) -> Vec<usize> {
    let top = risk_levels.iter().copied().max().unwrap_or(0);
    for level in (1..=top).rev() {
        let capacity = tolerances.iter().filter(|&&t| t >= level).count();
        let mut load: usize = (0..demands.len()).filter(|&j| risk_levels[j] >= level).map(|j| demands[j]).sum();
        let Some(sink) = (0..demands.len())
            .filter(|&j| risk_levels[j] < level)
            .max_by_key(|&j| (risk_levels[j], std::cmp::Reverse(j)))
        else {
            continue;
        };
        while load > capacity {
            let from = (0..demands.len())
                .filter(|&j| risk_levels[j] >= level && demands[j] > 0)
                .max_by_key(|&j| (demands[j], std::cmp::Reverse(j)))
                .expect("positive load has a source");
            let moved = (load - capacity).min(demands[from]);
            demands[from] -= moved;
            demands[sink] += moved;
            load -= moved;
        }
    }
    demands
}

/// True conversion probabilities and log-amount parameters for every pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthGrid {
    pub n_users: usize,
    pub n_funds: usize,
    pub p: Vec<f64>,
    pub mu: Vec<f64>,
    /// Per fund.
    pub sigma: Vec<f64>,
}

impl TruthGrid {
    /// `p * (exp(mu + sigma^2/2) - 1)` per pair.
    pub fn etv(&self) -> Result<EtvMatrix> {
        let values = (0..self.n_users * self.n_funds)
            .map(|idx| {
                let s = self.sigma[idx % self.n_funds];
                (self.p[idx] * (self.mu[idx] + 0.5 * s * s).exp_m1()).max(0.0)
            })
            .collect();
        EtvMatrix::new(self.n_users, self.n_funds, values)
    }

    /// One outcome per pair. With `shared_noise`, a user's uniform and normal
    /// draws are reused across funds (common random numbers).
    pub fn realize(&self, rng: &mut ChaCha8Rng, shared_noise: bool) -> Vec<Observation> {
        let k = self.n_funds;
        let mut out = Vec::with_capacity(self.n_users * k);
        for i in 0..self.n_users {
            let mut shared = None;
            for j in 0..k {
                let (u, z) = match shared {
                    Some(draw) => draw,
                    None => {
                        let draw: (f64, f64) = (rng.random(), rng.sample(StandardNormal));
                        if shared_noise {
                            shared = Some(draw);
                        }
                        draw
                    }
                };
                let idx = i * k + j;
                let obs = if u < self.p[idx] {
                    let v = (self.mu[idx] + self.sigma[j] * z).max(MIN_LOG_AMOUNT);
                    Observation { user: i, fund: j, converted: true, amount: v.exp_m1() }
                } else {
                    Observation { user: i, fund: j, converted: false, amount: 0.0 }
                };
                out.push(obs);
            }
        }
        out
    }
}

/// A population with its realized outcomes and the truth behind them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub instance: Instance,
    pub observations: Vec<Observation>,
    pub truth: TruthGrid,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub world: World,
    /// Training population, independent outcomes on every pair.
    pub history: Dataset,
    /// Evaluation population, counterfactual outcomes on every pair.
    pub evaluation: Dataset,
}

pub fn generate(config: &GeneratorConfig) -> Result<Generated> {
    let world = World::new(config)?;
    let history = {
        let mut rng = seed::rng(config.seed, stage::HISTORY);
        let instance = world.sample_instance(config.history_users, &mut rng)?;
        let truth = world.truth(&instance);
        let observations = truth.realize(&mut rng, false);
        Dataset { instance, observations, truth }
    };
    let evaluation = {
        let instance = world.sample_instance(config.n_users, &mut seed::rng(config.seed, stage::EVALUATION))?;
        let truth = world.truth(&instance);
        let observations = truth.realize(&mut seed::rng(config.seed, stage::OUTCOMES), true);
        Dataset { instance, observations, truth }
    };
    Ok(Generated { world, history, evaluation })
}

/// Evaluation instance and its true ETV only, for allocation benchmarks.
pub fn allocation_instance(config: &GeneratorConfig) -> Result<(Instance, EtvMatrix)> {
    let world = World::new(config)?;
    let instance = world.sample_instance(config.n_users, &mut seed::rng(config.seed, stage::EVALUATION))?;
    let etv = world.truth(&instance).etv()?;
    Ok((instance, etv))
}
