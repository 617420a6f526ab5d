//! Allocation problem domain: users, fund types, instances, ETV matrices and plans.
//!
//! A user `i` may only be placed in fund `j` when `risk_tolerance[i] >= risk_level[j]`,
//! every user gets exactly one fund, and every fund gets exactly `demand[j]` users.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::flow::MaxFlow;

/// Highest risk level accepted unless an instance is built with a wider scale.
pub const DEFAULT_MAX_RISK_LEVEL: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: usize,
    pub risk_tolerance: u32,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundType {
    pub id: usize,
    pub risk_level: u32,
    pub demand: usize,
    pub features: Vec<f64>,
}

/// Users and fund types of one allocation problem.
///
/// Construction only checks shapes (dense ids, consistent feature widths, risk
/// scale). Demand totals and feasibility are checked by [`validate_instance`],
/// so malformed-but-parseable data can still be loaded and reported on.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    users: Vec<UserRecord>,
    funds: Vec<FundType>,
    user_dim: usize,
    fund_dim: usize,
    max_risk_level: u32,
}

impl Instance {
    pub fn new(users: Vec<UserRecord>, funds: Vec<FundType>) -> Result<Self> {
        Self::with_risk_scale(users, funds, DEFAULT_MAX_RISK_LEVEL)
    }

    pub fn with_risk_scale(users: Vec<UserRecord>, funds: Vec<FundType>, max_risk_level: u32) -> Result<Self> {
        let user_dim = users.first().map_or(0, |u| u.features.len());
        let fund_dim = funds.first().map_or(0, |f| f.features.len());
        for (pos, u) in users.iter().enumerate() {
            if u.id != pos {
                return Err(Error::Shape(format!("user ids must be dense: position {pos} has id {}", u.id)));
            }
            if u.features.len() != user_dim {
                return Err(Error::Shape(format!(
                    "user {} has {} features, expected {user_dim}",
                    u.id,
                    u.features.len()
                )));
            }
            if u.risk_tolerance > max_risk_level {
                return Err(Error::Shape(format!(
                    "user {} risk tolerance {} exceeds max level {max_risk_level}",
                    u.id, u.risk_tolerance
                )));
            }
        }
        for (pos, f) in funds.iter().enumerate() {
            if f.id != pos {
                return Err(Error::Shape(format!("fund ids must be dense: position {pos} has id {}", f.id)));
            }
            if f.features.len() != fund_dim {
                return Err(Error::Shape(format!(
                    "fund {} has {} features, expected {fund_dim}",
                    f.id,
                    f.features.len()
                )));
            }
            if f.risk_level > max_risk_level {
                return Err(Error::Shape(format!(
                    "fund {} risk level {} exceeds max level {max_risk_level}",
                    f.id, f.risk_level
                )));
            }
        }
        let all_finite =
            users.iter().flat_map(|u| &u.features).chain(funds.iter().flat_map(|f| &f.features)).all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::InvalidValue("features must be finite".into()));
        }
        Ok(Self { users, funds, user_dim, fund_dim, max_risk_level })
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn funds(&self) -> &[FundType] {
        &self.funds
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_funds(&self) -> usize {
        self.funds.len()
    }

    pub fn user_dim(&self) -> usize {
        self.user_dim
    }

    pub fn fund_dim(&self) -> usize {
        self.fund_dim
    }

    pub fn max_risk_level(&self) -> u32 {
        self.max_risk_level
    }

    pub fn demands(&self) -> Vec<usize> {
        self.funds.iter().map(|f| f.demand).collect()
    }

    #[inline]
    pub fn eligible(&self, user: usize, fund: usize) -> bool {
        self.users[user].risk_tolerance >= self.funds[fund].risk_level
    }

    /// Largest number of users that can be placed without exceeding any demand.
    ///
    /// Users with equal tolerance are interchangeable for eligibility, so the
    /// flow network groups them: source -> tolerance level (cap = #users at
    /// that level) -> every fund it may hold -> sink (cap = demand).
    pub fn max_placeable(&self) -> usize {
        let levels = self.max_risk_level as usize + 1;
        let k = self.funds.len();
        let source = levels + k;
        let sink = source + 1;
        let mut g = MaxFlow::new(levels + k + 2);
        let mut per_level = vec![0usize; levels];
        for u in &self.users {
            per_level[u.risk_tolerance as usize] += 1;
        }
        for (level, &count) in per_level.iter().enumerate() {
            if count == 0 {
                continue;
            }
            g.add_edge(source, level, count);
            for f in &self.funds {
                if level as u32 >= f.risk_level {
                    g.add_edge(level, levels + f.id, count);
                }
            }
        }
        for f in &self.funds {
            g.add_edge(levels + f.id, sink, f.demand);
        }
        g.run(source, sink)
    }
}

/// Returns every broken instance invariant, including infeasibility.
pub fn validate_instance(instance: &Instance) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let n = instance.n_users();
    if instance.n_funds() == 0 && n > 0 {
        violations.push(Violation::Shape("instance has users but no funds".into()));
    }
    let demand_total: usize = instance.funds.iter().map(|f| f.demand).sum();
    if demand_total != n {
        violations.push(Violation::DemandMismatch { demand_total, users: n });
    }
    let placeable = instance.max_placeable();
    if placeable < n.min(demand_total) {
        violations.push(Violation::Infeasible { placeable, users: n });
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Dense N x K matrix of nonnegative expected transaction values, row-major by user.
#[derive(Debug, Clone, PartialEq)]
pub struct EtvMatrix {
    n_users: usize,
    n_funds: usize,
    values: Vec<f64>,
}

impl EtvMatrix {
    pub fn new(n_users: usize, n_funds: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_users * n_funds {
            return Err(Error::Shape(format!(
                "ETV matrix {n_users}x{n_funds} needs {} values, got {}",
                n_users * n_funds,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidValue(format!(
                "ETV[{}, {}] = {} is not a finite nonnegative value",
                pos / n_funds.max(1),
                pos % n_funds.max(1),
                values[pos]
            )));
        }
        Ok(Self { n_users, n_funds, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("ETV rows have unequal lengths".into()));
        }
        Self::new(rows.len(), k, rows.concat())
    }

    pub fn zeros(n_users: usize, n_funds: usize) -> Self {
        Self { n_users, n_funds, values: vec![0.0; n_users * n_funds] }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_funds(&self) -> usize {
        self.n_funds
    }

    #[inline]
    pub fn get(&self, user: usize, fund: usize) -> f64 {
        self.values[user * self.n_funds + fund]
    }

    #[inline]
    pub fn row(&self, user: usize) -> &[f64] {
        &self.values[user * self.n_funds..(user + 1) * self.n_funds]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Multiplies every entry by a positive constant.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.n_users, self.n_funds, self.values.iter().map(|v| v * factor).collect())
    }

    pub fn check_matches(&self, instance: &Instance) -> Result<()> {
        if self.n_users != instance.n_users() || self.n_funds != instance.n_funds() {
            return Err(Error::Shape(format!(
                "ETV matrix is {}x{} but instance has {} users and {} funds",
                self.n_users,
                self.n_funds,
                instance.n_users(),
                instance.n_funds()
            )));
        }
        Ok(())
    }
}

/// One fund index per user.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AllocationPlan {
    pub assignment: Vec<usize>,
}

impl AllocationPlan {
    pub fn new(assignment: Vec<usize>) -> Self {
        Self { assignment }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Number of users placed in each of `n_funds` funds.
    pub fn fund_counts(&self, n_funds: usize) -> Vec<usize> {
        let mut counts = vec![0; n_funds];
        for &j in &self.assignment {
            if j < n_funds {
                counts[j] += 1;
            }
        }
        counts
    }
}

/// Checks one-fund-per-user, exact demands and risk eligibility.
pub fn validate_plan(instance: &Instance, plan: &AllocationPlan) -> Result<(), Vec<Violation>> {
    let k = instance.n_funds();
    if plan.len() != instance.n_users() {
        return Err(vec![Violation::Shape(format!(
            "plan covers {} users, instance has {}",
            plan.len(),
            instance.n_users()
        ))]);
    }
    let mut violations = Vec::new();
    for (user, &fund) in plan.assignment.iter().enumerate() {
        if fund >= k {
            violations.push(Violation::Shape(format!("user {user} assigned to unknown fund {fund}")));
        } else if !instance.eligible(user, fund) {
            violations.push(Violation::RiskViolation {
                user,
                fund,
                tolerance: instance.users[user].risk_tolerance,
                risk_level: instance.funds[fund].risk_level,
            });
        }
    }
    for (fund, assigned) in plan.fund_counts(k).into_iter().enumerate() {
        let demand = instance.funds[fund].demand;
        if assigned != demand {
            violations.push(Violation::DemandViolation { fund, assigned, demand });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Total ETV collected by a plan.
pub fn objective(etv: &EtvMatrix, plan: &AllocationPlan) -> Result<f64> {
    if plan.len() != etv.n_users() {
        return Err(Error::Shape(format!("plan covers {} users, ETV matrix has {}", plan.len(), etv.n_users())));
    }
    plan.assignment.iter().enumerate().try_fold(0.0, |acc, (i, &j)| {
        if j >= etv.n_funds() {
            Err(Error::Shape(format!("user {i} assigned to unknown fund {j}")))
        } else {
            Ok(acc + etv.get(i, j))
        }
    })
}

/// A logged or simulated outcome of showing one fund to one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub user: usize,
    pub fund: usize,
    pub converted: bool,
    pub amount: f64,
}

impl Observation {
    pub fn new(user: usize, fund: usize, converted: bool, amount: f64) -> Result<Self> {
        if !amount.is_finite() || amount < 0.0 {
            return Err(Error::InvalidValue(format!("purchase amount {amount} must be finite and >= 0")));
        }
        if converted != (amount > 0.0) {
            return Err(Error::InvalidValue(format!(
                "observation ({user}, {fund}): converted={converted} disagrees with amount {amount}"
            )));
        }
        Ok(Self { user, fund, converted, amount })
    }

    /// `v = log(PA + 1)`; zero for non-conversions.
    #[inline]
    pub fn log_label(&self) -> f64 {
        self.amount.ln_1p()
    }

    /// Shifted revenue label `PA + 1`.
    #[inline]
    pub fn shifted_amount(&self) -> f64 {
        self.amount + 1.0
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::{instance, small};
    use super::*;

    #[test]
    fn all_eligible_instance_is_valid() {
        let inst = instance(&[1, 1, 1], &[0, 1], &[1, 2]);
        assert_eq!(validate_instance(&inst), Ok(()));
    }

    #[test]
    fn demand_mismatch_reported() {
        let inst = instance(&[1, 1, 1], &[0, 1], &[1, 1]);
        let errs = validate_instance(&inst).unwrap_err();
        assert!(errs.contains(&Violation::DemandMismatch { demand_total: 2, users: 3 }));
    }

    #[test]
    fn infeasible_reported() {
        let inst = instance(&[0, 0], &[1, 0], &[2, 0]);
        let errs = validate_instance(&inst).unwrap_err();
        assert_eq!(errs, vec![Violation::Infeasible { placeable: 0, users: 2 }]);
    }

    #[test]
    fn shape_errors_at_construction() {
        let users = vec![UserRecord { id: 1, risk_tolerance: 0, features: vec![] }];
        assert!(matches!(Instance::new(users, vec![]), Err(Error::Shape(_))));
        let users = vec![
            UserRecord { id: 0, risk_tolerance: 0, features: vec![1.0] },
            UserRecord { id: 1, risk_tolerance: 0, features: vec![] },
        ];
        assert!(matches!(Instance::new(users, vec![]), Err(Error::Shape(_))));
        let users = vec![UserRecord { id: 0, risk_tolerance: 9, features: vec![] }];
        assert!(matches!(Instance::new(users, vec![]), Err(Error::Shape(_))));
    }

    #[test]
    fn plan_checks() {
        let (inst, _) = small();
        assert_eq!(validate_plan(&inst, &AllocationPlan::new(vec![0, 1, 1])), Ok(()));

        let errs = validate_plan(&inst, &AllocationPlan::new(vec![0, 0, 1])).unwrap_err();
        assert!(errs.contains(&Violation::DemandViolation { fund: 0, assigned: 2, demand: 1 }));

        let strict = instance(&[0, 1, 1], &[0, 1], &[1, 2]);
        let errs = validate_plan(&strict, &AllocationPlan::new(vec![1, 0, 1])).unwrap_err();
        assert!(errs.contains(&Violation::RiskViolation { user: 0, fund: 1, tolerance: 0, risk_level: 1 }));

        let errs = validate_plan(&inst, &AllocationPlan::new(vec![0, 1])).unwrap_err();
        assert!(matches!(errs[0], Violation::Shape(_)));
    }

    #[test]
    fn objective_values() {
        let (_, etv) = small();
        assert_eq!(objective(&etv, &AllocationPlan::new(vec![0, 1, 1])).unwrap(), 10.0);
        assert_eq!(objective(&etv, &AllocationPlan::new(vec![1, 0, 1])).unwrap(), 7.0);
        let zeros = EtvMatrix::zeros(3, 2);
        assert_eq!(objective(&zeros, &AllocationPlan::new(vec![1, 0, 1])).unwrap(), 0.0);
        assert!(objective(&etv, &AllocationPlan::new(vec![0, 1])).is_err());
    }

    #[test]
    fn etv_rejects_negative_and_nan() {
        assert!(EtvMatrix::new(1, 2, vec![1.0, -0.5]).is_err());
        assert!(EtvMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(EtvMatrix::new(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn observation_label_consistency() {
        let o = Observation::new(0, 0, true, std::f64::consts::E - 1.0).unwrap();
        assert!((o.log_label() - 1.0).abs() < 1e-15);
        assert_eq!(Observation::new(0, 0, false, 0.0).unwrap().log_label(), 0.0);
        assert!(Observation::new(0, 0, true, 0.0).is_err());
        assert!(Observation::new(0, 0, false, 3.0).is_err());
        assert!(Observation::new(0, 0, true, -1.0).is_err());
    }
}
