//! Incremental plan construction with augmenting-path repair for stranded users.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use crate::error::{Error, Result};
use crate::problem::{AllocationPlan, EtvMatrix, Instance};

const UNASSIGNED: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Gain(f64);

impl Eq for Gain {}

impl PartialOrd for Gain {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Gain {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Partial assignment that can re-route placed users.
///
/// With `guard` on, [`Placement::can_take`] also refuses moves that would
/// leave the unplaced users impossible to place. Eligibility is nested in
/// risk, so the remainder stays placeable exactly when, for every level `l`,
/// the unplaced users below `l` fit into the open slots of funds below `l`.
///
/// For every fund pair `(j, k)` a lazy max-heap holds the members of `j`
/// allowed in `k`, keyed by `ETV[w,k] - ETV[w,j]`; entries of users that have
/// since left `j` are discarded when they surface.
pub(crate) struct Placement<'a> {
    instance: &'a Instance,
    etv: &'a EtvMatrix,
    assignment: Vec<usize>,
    moves: Vec<BinaryHeap<(Gain, Reverse<usize>)>>,
    guard: bool,
    /// per level `l`: unplaced users with tolerance below `l`
    users_below: Vec<usize>,
    /// per level `l`: open slots in funds with risk below `l`
    slots_below: Vec<usize>,
    pub remaining: Vec<usize>,
    pub repairs: usize,
}

impl<'a> Placement<'a> {
    pub fn new(instance: &'a Instance, etv: &'a EtvMatrix, guard: bool) -> Self {
        let k = instance.n_funds();
        let levels = instance.max_risk_level() as usize + 2;
        let mut users_below = vec![0; levels];
        let mut slots_below = vec![0; levels];
        for u in instance.users() {
            users_below[u.risk_tolerance as usize + 1..].iter_mut().for_each(|c| *c += 1);
        }
        for f in instance.funds() {
            slots_below[f.risk_level as usize + 1..].iter_mut().for_each(|c| *c += f.demand);
        }
        Self {
            instance,
            etv,
            assignment: vec![UNASSIGNED; instance.n_users()],
            moves: (0..k * k).map(|_| BinaryHeap::new()).collect(),
            guard,
            users_below,
            slots_below,
            remaining: instance.demands(),
            repairs: 0,
        }
    }

    fn tolerance(&self, user: usize) -> usize {
        self.instance.users()[user].risk_tolerance as usize
    }

    fn risk(&self, fund: usize) -> usize {
        self.instance.funds()[fund].risk_level as usize
    }

    /// Whether `user` may be placed in `fund` now.
    pub fn can_take(&self, user: usize, fund: usize) -> bool {
        if !(self.is_open(fund) && self.instance.eligible(user, fund)) {
            return false;
        }
        // the slot leaves every level above the fund's risk, the user only
        // those above its tolerance; the levels in between lose slack
        !self.guard || (self.risk(fund) + 1..=self.tolerance(user)).all(|l| self.users_below[l] < self.slots_below[l])
    }

    #[inline]
    pub fn is_open(&self, fund: usize) -> bool {
        self.remaining[fund] > 0
    }

    fn attach(&mut self, user: usize, fund: usize) {
        let k = self.instance.n_funds();
        self.assignment[user] = fund;
        self.remaining[fund] -= 1;
        let (t, r) = (self.tolerance(user), self.risk(fund));
        self.users_below[t + 1..].iter_mut().for_each(|c| *c -= 1);
        self.slots_below[r + 1..].iter_mut().for_each(|c| *c -= 1);
        let here = self.etv.get(user, fund);
        for to in 0..k {
            if to != fund && self.instance.eligible(user, to) {
                self.moves[fund * k + to].push((Gain(self.etv.get(user, to) - here), Reverse(user)));
            }
        }
    }

    fn detach(&mut self, user: usize) {
        let fund = self.assignment[user];
        self.remaining[fund] += 1;
        let (t, r) = (self.tolerance(user), self.risk(fund));
        self.users_below[t + 1..].iter_mut().for_each(|c| *c += 1);
        self.slots_below[r + 1..].iter_mut().for_each(|c| *c += 1);
        self.assignment[user] = UNASSIGNED;
    }

    /// Best current member of `from` that may move to `to`.
    fn best_mover(&mut self, from: usize, to: usize) -> Option<(f64, usize)> {
        let heap = &mut self.moves[from * self.instance.n_funds() + to];
        while let Some(&(Gain(g), Reverse(w))) = heap.peek() {
            if self.assignment[w] == from {
                return Some((g, w));
            }
            heap.pop();
        }
        None
    }

    /// Places `user` in a fund it [can take](Placement::can_take).
    pub fn assign(&mut self, user: usize, fund: usize) {
        debug_assert!(self.can_take(user, fund));
        debug_assert_eq!(self.assignment[user], UNASSIGNED);
        self.attach(user, fund);
    }

    /// Places a user whose eligible funds are all full by shifting placed
    /// users along a chain of full funds that ends in an open one. Picks the
    /// chain with the largest total ETV change; returns the user's fund.
    pub fn repair(&mut self, user: usize) -> Result<usize> {
        let k = self.instance.n_funds();
        let mut gain = vec![None; k * k];
        for from in 0..k {
            if self.is_open(from) {
                continue;
            }
            for to in 0..k {
                if to != from {
                    gain[from * k + to] = self.best_mover(from, to);
                }
            }
        }
        let path = self.best_path(user, &gain).or_else(|| self.shortest_path(user, &gain));
        let path = path.ok_or_else(|| Error::Infeasible(format!("no augmenting path places user {user}")))?;

        // shift from the open end backwards so every fund keeps its count
        for hop in path.windows(2).rev() {
            let (from, to) = (hop[0], hop[1]);
            let (_, mover) = gain[from * k + to].expect("path uses existing moves");
            self.detach(mover);
            self.attach(mover, to);
        }
        self.attach(user, path[0]);
        self.repairs += 1;
        Ok(path[0])
    }

    /// Highest-value walk of at most `K` hops; `None` if the best walk revisits
    /// a fund (a member would be moved twice).
    fn best_path(&self, user: usize, gain: &[Option<(f64, usize)>]) -> Option<Vec<usize>> {
        let k = self.instance.n_funds();
        let mut value = vec![vec![f64::NEG_INFINITY; k]; k];
        let mut parent = vec![vec![UNASSIGNED; k]; k];
        for (j, v) in value[0].iter_mut().enumerate() {
            if self.instance.eligible(user, j) {
                *v = self.etv.get(user, j);
            }
        }
        for hop in 1..k {
            for from in 0..k {
                let base = value[hop - 1][from];
                if base == f64::NEG_INFINITY || self.is_open(from) {
                    continue;
                }
                for to in 0..k {
                    if let Some((g, _)) = gain[from * k + to] {
                        if base + g > value[hop][to] {
                            value[hop][to] = base + g;
                            parent[hop][to] = from;
                        }
                    }
                }
            }
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for (hop, row) in value.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if self.is_open(j) && v > f64::NEG_INFINITY && best.is_none_or(|(bv, _, _)| v > bv) {
                    best = Some((v, hop, j));
                }
            }
        }
        let (_, mut hop, mut j) = best?;
        let mut path = vec![j];
        while hop > 0 {
            j = parent[hop][j];
            hop -= 1;
            path.push(j);
        }
        path.reverse();
        let mut seen = vec![false; k];
        path.iter().all(|&f| !std::mem::replace(&mut seen[f], true)).then_some(path)
    }

    /// Fewest-hop chain, trying the user's best funds first.
    fn shortest_path(&self, user: usize, gain: &[Option<(f64, usize)>]) -> Option<Vec<usize>> {
        let k = self.instance.n_funds();
        let mut parent = vec![UNASSIGNED; k];
        let mut seen = vec![false; k];
        let mut queue = VecDeque::new();
        let mut starts: Vec<usize> = (0..k).filter(|&j| self.instance.eligible(user, j)).collect();
        starts.sort_by(|&a, &b| self.etv.get(user, b).total_cmp(&self.etv.get(user, a)).then(a.cmp(&b)));
        for j in starts {
            seen[j] = true;
            queue.push_back(j);
        }
        while let Some(j) = queue.pop_front() {
            if self.is_open(j) {
                let mut path = vec![j];
                while parent[*path.last().expect("non-empty")] != UNASSIGNED {
                    path.push(parent[*path.last().expect("non-empty")]);
                }
                path.reverse();
                return Some(path);
            }
            for next in 0..k {
                if !seen[next] && gain[j * k + next].is_some() {
                    seen[next] = true;
                    parent[next] = j;
                    queue.push_back(next);
                }
            }
        }
        None
    }

    pub fn into_plan(self) -> Result<AllocationPlan> {
        if let Some(user) = self.assignment.iter().position(|&j| j == UNASSIGNED) {
            return Err(Error::Infeasible(format!("user {user} left unassigned")));
        }
        Ok(AllocationPlan::new(self.assignment))
    }
}
