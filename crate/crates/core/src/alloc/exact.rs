//! Optimal allocation as min-cost flow on the user/fund network
//! (source -> user cap 1, user -> eligible fund cap 1 cost -ETV,
//! fund -> sink cap d_j), solved by successive shortest paths.
//!
//! Users enter one at a time and each is routed along a shortest augmenting
//! path in the residual network. Dijkstra runs on reduced costs with node
//! potentials and stops as soon as the sink is settled. The residual network
//! stays free of negative cycles because every intermediate flow is a
//! min-cost flow for the users added so far.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::alloc::precheck;
use crate::error::{Error, Result};
use crate::problem::{AllocationPlan, EtvMatrix, Instance};

const NONE: usize = usize::MAX;

/// Non-negative f64 with a total order, for the heap.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

pub fn allocate_exact(instance: &Instance, etv: &EtvMatrix) -> Result<AllocationPlan> {
    precheck(instance, etv)?;
    let n = instance.n_users();
    let k = instance.n_funds();
    let demand = instance.demands();
    // node ids: users 0..n, funds n..n+k, sink n+k
    let sink = n + k;
    let fund_node = |j: usize| n + j;

    let eligible: Vec<Vec<usize>> = (0..n).map(|i| (0..k).filter(|&j| instance.eligible(i, j)).collect()).collect();
    let mut assignment = vec![NONE; n];
    let mut slot = vec![0usize; n];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut phi = vec![0.0f64; n + k + 1];

    let mut dist = vec![f64::INFINITY; n + k + 1];
    let mut parent = vec![NONE; n + k + 1];
    let mut done = vec![false; n + k + 1];
    let mut touched: Vec<usize> = Vec::new();
    let mut heap = BinaryHeap::new();

    for u in 0..n {
        // make every arc out of the new user non-negative under phi
        phi[u] = eligible[u].iter().map(|&j| phi[fund_node(j)] + etv.get(u, j)).fold(f64::NEG_INFINITY, f64::max);
        if !phi[u].is_finite() {
            return Err(Error::Infeasible(format!("user {u} has no eligible fund")));
        }

        dist[u] = 0.0;
        touched.push(u);
        heap.push(Reverse((Dist(0.0), u)));
        let mut settled: Vec<usize> = Vec::new();
        while let Some(Reverse((Dist(d), x))) = heap.pop() {
            if done[x] || d > dist[x] {
                continue;
            }
            done[x] = true;
            settled.push(x);
            if x == sink {
                break;
            }
            let mut relax = |to: usize, reduced: f64, from: usize, heap: &mut BinaryHeap<_>| {
                let nd = d + reduced.max(0.0);
                if nd < dist[to] {
                    if dist[to] == f64::INFINITY {
                        touched.push(to);
                    }
                    dist[to] = nd;
                    parent[to] = from;
                    heap.push(Reverse((Dist(nd), to)));
                }
            };
            if x < n {
                let w = x;
                for &j in &eligible[w] {
                    if j != assignment[w] {
                        let f = fund_node(j);
                        relax(f, -etv.get(w, j) + phi[w] - phi[f], w, &mut heap);
                    }
                }
            } else {
                let j = x - n;
                if members[j].len() < demand[j] {
                    relax(sink, phi[x] - phi[sink], x, &mut heap);
                }
                for &w in &members[j] {
                    relax(w, etv.get(w, j) + phi[x] - phi[w], x, &mut heap);
                }
            }
        }
        if !done[sink] {
            return Err(Error::Infeasible(format!("no augmenting path for user {u}")));
        }

        // potentials: phi[v] += min(dist[v], dist[sink]), shifted by -dist[sink]
        let ds = dist[sink];
        for &v in &settled {
            if dist[v] < ds {
                phi[v] -= ds - dist[v];
            }
        }

        // augment: the path alternates fund <- user <- fund ... <- u
        let mut f = parent[sink];
        while f != NONE {
            let j = f - n;
            let w = parent[f];
            let old = assignment[w];
            if old != NONE {
                let pos = slot[w];
                members[old].swap_remove(pos);
                if let Some(&moved) = members[old].get(pos) {
                    slot[moved] = pos;
                }
            }
            assignment[w] = j;
            slot[w] = members[j].len();
            members[j].push(w);
            f = if old == NONE { NONE } else { fund_node(old) };
            debug_assert!(old == NONE || parent[w] == f);
        }

        for &v in &touched {
            dist[v] = f64::INFINITY;
            parent[v] = NONE;
            done[v] = false;
        }
        touched.clear();
        heap.clear();
    }
    Ok(AllocationPlan::new(assignment))
}
