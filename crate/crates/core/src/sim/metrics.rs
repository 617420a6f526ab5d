//! Offline and delivery metrics over simulated outcomes.

use crate::error::{Error, Result};
use crate::problem::{AllocationPlan, EtvMatrix, Observation};

/// Realized outcome for every (user, fund) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeGrid {
    n_users: usize,
    n_funds: usize,
    cells: Vec<Observation>,
}

impl OutcomeGrid {
    /// Requires exactly one observation per pair, in any order.
    pub fn from_observations(n_users: usize, n_funds: usize, observations: &[Observation]) -> Result<Self> {
        let mut cells: Vec<Option<Observation>> = vec![None; n_users * n_funds];
        for o in observations {
            if o.user >= n_users || o.fund >= n_funds {
                return Err(Error::Shape(format!(
                    "outcome ({}, {}) outside a {n_users}x{n_funds} grid",
                    o.user, o.fund
                )));
            }
            if cells[o.user * n_funds + o.fund].replace(*o).is_some() {
                return Err(Error::Shape(format!("duplicate outcome for pair ({}, {})", o.user, o.fund)));
            }
        }
        let cells = cells
            .into_iter()
            .enumerate()
            .map(|(idx, c)| {
                c.ok_or_else(|| {
                    Error::Shape(format!("missing outcome for pair ({}, {})", idx / n_funds, idx % n_funds))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { n_users, n_funds, cells })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_funds(&self) -> usize {
        self.n_funds
    }

    #[inline]
    pub fn get(&self, user: usize, fund: usize) -> &Observation {
        &self.cells[user * self.n_funds + fund]
    }

    fn check_etv(&self, etv: &EtvMatrix) -> Result<()> {
        if etv.n_users() != self.n_users || etv.n_funds() != self.n_funds {
            return Err(Error::Shape(format!(
                "ETV matrix is {}x{} but outcomes are {}x{}",
                etv.n_users(),
                etv.n_funds(),
                self.n_users,
                self.n_funds
            )));
        }
        Ok(())
    }
}

/// Each user's highest-ETV fund, ties to the lowest fund id. Ignores demand
/// and risk constraints.
pub fn argmax_assignment(etv: &EtvMatrix) -> Vec<usize> {
    (0..etv.n_users())
        .map(|i| crate::alloc::argmax_first(etv.row(i).iter().copied().enumerate()).unwrap_or(0))
        .collect()
}

/// Total hit conversions and amount when every user is shown its argmax fund.
pub fn metrics_thc_tha(etv: &EtvMatrix, outcomes: &OutcomeGrid) -> Result<(u64, f64)> {
    outcomes.check_etv(etv)?;
    let mut thc = 0u64;
    let mut tha = 0.0;
    for (i, j) in argmax_assignment(etv).into_iter().enumerate() {
        let o = outcomes.get(i, j);
        thc += u64::from(o.converted);
        tha += o.amount;
    }
    Ok((thc, tha))
}

/// The outcome of each user's assigned fund, in user order.
pub fn delivered(plan: &AllocationPlan, outcomes: &OutcomeGrid) -> Result<Vec<Observation>> {
    if plan.len() != outcomes.n_users {
        return Err(Error::Shape(format!("plan covers {} users, outcomes {}", plan.len(), outcomes.n_users)));
    }
    plan.assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            if j >= outcomes.n_funds {
                return Err(Error::Shape(format!("user {i} assigned to unknown fund {j}")));
            }
            Ok(*outcomes.get(i, j))
        })
        .collect()
}

/// Conversions and amount per thousand deliveries.
pub fn metrics_delivery(deliveries: &[Observation]) -> Result<(f64, f64)> {
    if deliveries.is_empty() {
        return Err(Error::EmptyDeliveries);
    }
    let n = deliveries.len() as f64;
    let conversions = deliveries.iter().filter(|o| o.converted).count() as f64;
    let amount: f64 = deliveries.iter().map(|o| o.amount).sum();
    Ok((conversions / n * 1000.0, amount / n * 1000.0))
}

/// Area under the ROC curve; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidValue("AUC scores must not be NaN".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::EmptyData("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tie groups
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + end) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[start..=end].iter().filter(|&&i| labels[i]).count() as f64;
        start = end + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean of `(ln(1 + ETV) - ln(1 + PA))^2` over every pair, converted or not.
pub fn entire_space_mse(etv: &EtvMatrix, outcomes: &OutcomeGrid) -> Result<f64> {
    outcomes.check_etv(etv)?;
    if outcomes.cells.is_empty() {
        return Err(Error::EmptyData("no outcomes".into()));
    }
    let total: f64 = outcomes.cells.iter().zip(etv.values()).map(|(o, e)| (e.ln_1p() - o.log_label()).powi(2)).sum();
    Ok(total / outcomes.cells.len() as f64)
}
