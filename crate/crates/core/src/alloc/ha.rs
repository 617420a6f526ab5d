//! Heuristic allocation driven by fund satisfaction speed and user regret.
//!
//! A fund's satisfaction speed `alpha_j` is the open ETV mass pointing at it
//! per unit of remaining demand. A user's score is
//! `h = ((alpha_a + alpha_b) / 2) * (2 E_a - E_b - E_c)` over its three best
//! open funds `a, b, c`: users who lose most by missing their favourite, at
//! funds that are hardest to satisfy, go first. Scores are refreshed every
//! time a fund fills up.

use crate::alloc::placement::Placement;
use crate::alloc::{argmax_first, precheck};
use crate::error::Result;
use crate::problem::{AllocationPlan, EtvMatrix, Instance};

/// Intermediate heuristic state, exposed for inspection and tests.
#[derive(Debug, Clone)]
pub struct HaState {
    /// ETV with ineligible pairs and full funds zeroed, row-major.
    pub masked_etv: Vec<f64>,
    pub n_funds: usize,
    pub remaining_demand: Vec<usize>,
    /// Users not yet placed, in processing order.
    pub queue: Vec<usize>,
    pub alpha: Vec<f64>,
    /// Score per user; stale for users already placed.
    pub h: Vec<f64>,
}

impl HaState {
    pub fn new(instance: &Instance, etv: &EtvMatrix) -> Self {
        let (n, k) = (instance.n_users(), instance.n_funds());
        let mut masked_etv = Vec::with_capacity(n * k);
        for i in 0..n {
            for j in 0..k {
                masked_etv.push(if instance.eligible(i, j) { etv.get(i, j) } else { 0.0 });
            }
        }
        let mut state = Self {
            masked_etv,
            n_funds: k,
            remaining_demand: instance.demands(),
            queue: (0..n).collect(),
            alpha: vec![0.0; k],
            h: vec![0.0; n],
        };
        for j in 0..k {
            if state.remaining_demand[j] == 0 {
                state.close(j);
            }
        }
        state.rescore();
        state
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.masked_etv[i * self.n_funds..(i + 1) * self.n_funds]
    }

    fn is_open(&self, j: usize) -> bool {
        self.remaining_demand[j] > 0
    }

    fn close(&mut self, j: usize) {
        let k = self.n_funds;
        for i in 0..self.masked_etv.len() / k {
            self.masked_etv[i * k + j] = 0.0;
        }
    }

    /// Recomputes `alpha` over queued users and open funds, then `h`, and
    /// re-sorts the queue by `h` descending, ties by user id.
    pub fn rescore(&mut self) {
        let k = self.n_funds;
        let mut mass = vec![0.0; k];
        for &i in &self.queue {
            for (m, v) in mass.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        for (j, m) in mass.into_iter().enumerate() {
            self.alpha[j] = if self.is_open(j) { m / self.remaining_demand[j] as f64 } else { 0.0 };
        }
        let open: Vec<usize> = (0..k).filter(|&j| self.is_open(j)).collect();
        for idx in 0..self.queue.len() {
            let i = self.queue[idx];
            self.h[i] = self.score(i, &open);
        }
        let h = &self.h;
        self.queue.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));
    }

    fn score(&self, i: usize, open: &[usize]) -> f64 {
        let row = self.row(i);
        // three best open funds, ties by fund id
        let mut top: [Option<usize>; 3] = [None; 3];
        for &j in open {
            let v = row[j];
            let mut slot = 3;
            for s in (0..3).rev() {
                match top[s] {
                    Some(t) if row[t] >= v => break,
                    _ => slot = s,
                }
            }
            if slot < 3 {
                for s in (slot + 1..3).rev() {
                    top[s] = top[s - 1];
                }
                top[slot] = Some(j);
            }
        }
        let Some(a) = top[0] else { return 0.0 };
        let e = |t: Option<usize>| t.map_or(0.0, |j| row[j]);
        let alpha_b = top[1].map_or(self.alpha[a], |b| self.alpha[b]);
        0.5 * (self.alpha[a] + alpha_b) * (2.0 * row[a] - e(top[1]) - e(top[2]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HaOptions {
    /// Skip funds whose choice would leave later users unplaceable, instead
    /// of only repairing users once they are stranded.
    pub prevent_stranding: bool,
}

impl Default for HaOptions {
    fn default() -> Self {
        Self { prevent_stranding: true }
    }
}

pub fn allocate_ha(instance: &Instance, etv: &EtvMatrix) -> Result<AllocationPlan> {
    allocate_ha_with(instance, etv, HaOptions::default())
}

pub fn allocate_ha_with(instance: &Instance, etv: &EtvMatrix, options: HaOptions) -> Result<AllocationPlan> {
    precheck(instance, etv)?;
    let mut state = HaState::new(instance, etv);
    let mut placement = Placement::new(instance, etv, options.prevent_stranding);
    let k = instance.n_funds();

    let mut cursor = 0;
    while cursor < state.queue.len() {
        let i = state.queue[cursor];
        cursor += 1;
        let best = argmax_first((0..k).filter(|&j| placement.can_take(i, j)).map(|j| (j, state.row(i)[j])));
        match best {
            Some(j) => placement.assign(i, j),
            None => {
                placement.repair(i)?;
            }
        }
        // a step fills exactly one slot, though a repair may fill it elsewhere
        let mut closed = false;
        for j in 0..k {
            if state.remaining_demand[j] != placement.remaining[j] {
                state.remaining_demand[j] = placement.remaining[j];
                if state.remaining_demand[j] == 0 {
                    state.close(j);
                    closed = true;
                }
            }
        }
        if closed {
            state.queue.drain(..cursor);
            cursor = 0;
            state.rescore();
        }
    }
    placement.into_plan()
}
