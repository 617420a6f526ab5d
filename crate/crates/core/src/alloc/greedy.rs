use crate::alloc::placement::Placement;
use crate::alloc::{argmax_first, precheck};
use crate::error::Result;
use crate::problem::{AllocationPlan, EtvMatrix, Instance};

/// Users in id order, each to the open eligible fund with the highest ETV
/// (ties by fund id), with the same stranding guard and repair as HA.
pub fn allocate_greedy(instance: &Instance, etv: &EtvMatrix) -> Result<AllocationPlan> {
    precheck(instance, etv)?;
    let mut placement = Placement::new(instance, etv, true);
    let k = instance.n_funds();
    for i in 0..instance.n_users() {
        let row = etv.row(i);
        match argmax_first((0..k).filter(|&j| placement.can_take(i, j)).map(|j| (j, row[j]))) {
            Some(j) => placement.assign(i, j),
            None => {
                placement.repair(i)?;
            }
        }
    }
    placement.into_plan()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::fixtures::small;

    #[test]
    fn first_come_first_served() {
        let (inst, etv) = small();
        // user 0 takes fund 0, the rest fill fund 1
        assert_eq!(allocate_greedy(&inst, &etv).unwrap().assignment, vec![0, 1, 1]);
    }
}
