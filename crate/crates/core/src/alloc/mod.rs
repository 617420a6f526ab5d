//! Allocation strategies over a fixed ETV matrix.
//!
//! Every strategy returns a plan that places each user in exactly one fund,
//! fills every fund to its demand, and respects risk eligibility.

mod exact;
mod greedy;
mod ha;
mod manual;
mod placement;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::problem::{validate_instance, AllocationPlan, EtvMatrix, Instance};

pub use exact::allocate_exact;
pub use greedy::allocate_greedy;
pub use ha::{allocate_ha, allocate_ha_with, HaOptions, HaState};
pub use manual::{allocate_manual, default_manual_priority};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Strategy {
    /// Satisfaction-speed / regret-score heuristic.
    Ha,
    /// Min-cost-flow optimum.
    Exact,
    /// Fixed fund priority; `None` uses [`default_manual_priority`].
    Manual(Option<Vec<usize>>),
    /// Users in id order, each to its best open fund.
    Greedy,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Ha => "ha",
            Strategy::Exact => "exact",
            Strategy::Manual(_) => "manual",
            Strategy::Greedy => "greedy",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ha" => Ok(Strategy::Ha),
            "exact" => Ok(Strategy::Exact),
            "manual" => Ok(Strategy::Manual(None)),
            "greedy" => Ok(Strategy::Greedy),
            other => Err(Error::Config(format!("unknown strategy {other:?} (expected ha, exact, manual or greedy)"))),
        }
    }
}

/// Parses `"2,0,1"` into a fund priority list.
pub fn parse_priority(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Parse(format!("bad fund id {t:?} in priority list"))))
        .collect()
}

pub fn allocate(strategy: &Strategy, instance: &Instance, etv: &EtvMatrix) -> Result<AllocationPlan> {
    match strategy {
        Strategy::Ha => allocate_ha(instance, etv),
        Strategy::Exact => allocate_exact(instance, etv),
        Strategy::Manual(Some(priority)) => allocate_manual(instance, etv, priority),
        Strategy::Manual(None) => allocate_manual(instance, etv, &default_manual_priority(instance, etv)),
        Strategy::Greedy => allocate_greedy(instance, etv),
    }
}

/// Runs a strategy and reports its wall time.
pub fn allocate_timed(strategy: &Strategy, instance: &Instance, etv: &EtvMatrix) -> Result<(AllocationPlan, Duration)> {
    let start = Instant::now();
    let plan = allocate(strategy, instance, etv)?;
    Ok((plan, start.elapsed()))
}

/// Shape and feasibility gate shared by all strategies.
pub(crate) fn precheck(instance: &Instance, etv: &EtvMatrix) -> Result<()> {
    etv.check_matches(instance)?;
    validate_instance(instance).map_err(|violations| {
        if violations.iter().any(|v| matches!(v, crate::Violation::Infeasible { .. })) {
            Error::Infeasible(violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        } else {
            Error::Validation(violations)
        }
    })
}

/// Index of the largest value, ties to the lowest index.
#[inline]
pub(crate) fn argmax_first<I: IntoIterator<Item = (usize, f64)>>(items: I) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in items {
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((j, v)),
        }
    }
    best.map(|(j, _)| j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::fixtures::{instance, small};
    use crate::problem::{objective, validate_plan};

    #[test]
    fn names_parse() {
        for s in ["ha", "exact", "manual", "greedy"] {
            assert_eq!(s.parse::<Strategy>().unwrap().name(), s);
        }
        assert!("lp".parse::<Strategy>().is_err());
        assert_eq!(parse_priority("1, 0").unwrap(), vec![1, 0]);
        assert!(parse_priority("1,x").is_err());
    }

    #[test]
    fn every_strategy_solves_the_small_instance() {
        let (inst, etv) = small();
        for s in [Strategy::Ha, Strategy::Exact, Strategy::Manual(None), Strategy::Greedy] {
            let plan = allocate(&s, &inst, &etv).unwrap();
            assert_eq!(validate_plan(&inst, &plan), Ok(()));
            assert_eq!(objective(&etv, &plan).unwrap(), 10.0, "{s}");
        }
    }

    #[test]
    fn infeasible_and_mismatched_instances_rejected() {
        let inst = instance(&[0, 0], &[1, 0], &[2, 0]);
        let etv = EtvMatrix::zeros(2, 2);
        for s in [Strategy::Ha, Strategy::Exact, Strategy::Manual(None), Strategy::Greedy] {
            assert!(allocate(&s, &inst, &etv).unwrap_err().is_infeasible(), "{s}");
        }
        let inst = instance(&[1, 1, 1], &[0, 1], &[1, 1]);
        let etv = EtvMatrix::zeros(3, 2);
        assert!(matches!(allocate(&Strategy::Ha, &inst, &etv), Err(Error::Validation(_))));
        let (inst, _) = small();
        assert!(matches!(allocate(&Strategy::Exact, &inst, &EtvMatrix::zeros(2, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        assert_eq!(argmax_first([(0, 1.0), (1, 3.0), (2, 3.0)]), Some(1));
        assert_eq!(argmax_first(std::iter::empty()), None);
    }
}
