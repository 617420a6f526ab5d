use crate::alloc::precheck;
use crate::error::{Error, Result};
use crate::problem::{AllocationPlan, EtvMatrix, Instance};

/// Riskiest funds first, then by mean ETV descending, then by id.
///
/// Filling riskier funds first cannot strand anyone: the users they take are
/// exactly those who could also go anywhere else.
pub fn default_manual_priority(instance: &Instance, etv: &EtvMatrix) -> Vec<usize> {
    let k = instance.n_funds();
    let n = instance.n_users().max(1) as f64;
    let mean: Vec<f64> = (0..k).map(|j| (0..instance.n_users()).map(|i| etv.get(i, j)).sum::<f64>() / n).collect();
    let funds = instance.funds();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        funds[b].risk_level.cmp(&funds[a].risk_level).then(mean[b].total_cmp(&mean[a])).then(a.cmp(&b))
    });
    order
}

/// Funds in `priority` order each take their `d_j` highest-ETV eligible users
/// among those still unassigned (ties by user id).
pub fn allocate_manual(instance: &Instance, etv: &EtvMatrix, priority: &[usize]) -> Result<AllocationPlan> {
    precheck(instance, etv)?;
    let k = instance.n_funds();
    let mut seen = vec![false; k];
    if priority.len() != k || priority.iter().any(|&j| j >= k || std::mem::replace(&mut seen[j], true)) {
        return Err(Error::Config(format!("priority must be a permutation of fund ids 0..{k}, got {priority:?}")));
    }
    let n = instance.n_users();
    let mut assignment = vec![usize::MAX; n];
    for &j in priority {
        let demand = instance.funds()[j].demand;
        let mut candidates: Vec<usize> =
            (0..n).filter(|&i| assignment[i] == usize::MAX && instance.eligible(i, j)).collect();
        if candidates.len() < demand {
            return Err(Error::Infeasible(format!(
                "fund {j} needs {demand} users but only {} eligible remain under priority {priority:?}",
                candidates.len()
            )));
        }
        candidates.sort_by(|&a, &b| etv.get(b, j).total_cmp(&etv.get(a, j)).then(a.cmp(&b)));
        for &i in &candidates[..demand] {
            assignment[i] = j;
        }
    }
    Ok(AllocationPlan::new(assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::fixtures::{instance, small};
    use crate::problem::objective;

    #[test]
    fn both_orders_on_small_instance() {
        let (inst, etv) = small();
        let a = allocate_manual(&inst, &etv, &[0, 1]).unwrap();
        assert_eq!(a.assignment, vec![0, 1, 1]);
        let b = allocate_manual(&inst, &etv, &[1, 0]).unwrap();
        assert_eq!(b.assignment, vec![0, 1, 1]);
        assert_eq!(objective(&etv, &a).unwrap(), 10.0);
        assert_eq!(default_manual_priority(&inst, &etv), vec![1, 0]);
    }

    #[test]
    fn bad_priorities() {
        let (inst, etv) = small();
        for p in [vec![0], vec![0, 0], vec![0, 2]] {
            assert!(matches!(allocate_manual(&inst, &etv, &p), Err(Error::Config(_))));
        }
    }

    #[test]
    fn safe_fund_first_can_strand_users() {
        // user 0 may hold both, user 1 only the safe fund
        let inst = instance(&[1, 0], &[0, 1], &[1, 1]);
        let etv = EtvMatrix::from_rows(&[vec![5.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(allocate_manual(&inst, &etv, &[0, 1]).unwrap_err().is_infeasible());
        assert_eq!(allocate_manual(&inst, &etv, &[1, 0]).unwrap().assignment, vec![1, 0]);
    }
}
