//! Placement solvers.
//!
//! Instances with at most [`EXACT_VARIABLE_LIMIT`] binary assignment
//! variables (nodes x GPUs) go through an exact best-first branch and
//! bound over the linearized program's feasible assignments, with
//! memory/utilization constraint propagation and an admissible
//! channel-cost lower bound. Larger instances fall back to best-fit
//! greedy placement refined by move/swap hill climbing, reporting the
//! gap against the relaxation bound.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::problem::PlacementProblem;

/// Largest nodes-times-GPUs size solved exactly.
pub const EXACT_VARIABLE_LIMIT: usize = 60;

/// A solved placement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    /// GPU index per node.
    pub assignment: Vec<usize>,
    /// Transmission cost, seconds per batch.
    pub objective: f64,
    /// Whether optimality was proven.
    pub exact: bool,
    /// Objective minus the relaxation bound when not proven optimal.
    pub gap: Option<f64>,
    /// Branch-and-bound nodes expanded (0 on the greedy path).
    pub nodes_explored: u64,
}

/// Solve a placement problem, choosing the solver by instance size.
pub fn solve(problem: &PlacementProblem) -> Result<Solution> {
    problem.validate()?;
    if problem.nodes.is_empty() {
        return Ok(Solution {
            assignment: Vec::new(),
            objective: 0.0,
            exact: true,
            gap: None,
            nodes_explored: 0,
        });
    }
    if problem.nodes.len() * problem.num_gpus() <= EXACT_VARIABLE_LIMIT {
        branch_and_bound(problem)
    } else {
        greedy_with_local_search(problem)
    }
}

struct SearchState {
    bound: f64,
    seq: u64,
    assigned: Vec<usize>,
}

impl PartialEq for SearchState {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for SearchState {}
impl PartialOrd for SearchState {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SearchState {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for best-first (lowest bound).
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Exact best-first branch and bound over node-to-GPU assignments.
pub fn branch_and_bound(problem: &PlacementProblem) -> Result<Solution> {
    let g = problem.num_gpus();
    let n = problem.nodes.len();

    // Assign memory-heavy nodes first; they constrain the packing most.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        problem.nodes[b]
            .memory_demand
            .total_cmp(&problem.nodes[a].memory_demand)
            .then(
                problem.nodes[b]
                    .utilization_demand
                    .total_cmp(&problem.nodes[a].utilization_demand),
            )
            .then(a.cmp(&b))
    });
    let rank_of: Vec<usize> = {
        let mut r = vec![0; n];
        for (rank, &node) in order.iter().enumerate() {
            r[node] = rank;
        }
        r
    };

    // Cheapest possible channel cost overall and per source GPU.
    let min_channel_all = (0..g)
        .flat_map(|a| (0..g).map(move |b| (a, b)))
        .map(|(a, b)| problem.channel_cost(a, b))
        .fold(f64::INFINITY, f64::min);
    let min_channel_from: Vec<f64> = (0..g)
        .map(|a| {
            (0..g)
                .map(|b| problem.channel_cost(a, b).min(problem.channel_cost(b, a)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    // Admissible bound for a prefix assignment (by search order).
    let lower_bound = |assigned: &[usize]| -> f64 {
        let placed = assigned.len();
        let mut bound = 0.0;
        for e in &problem.edges {
            let fr = rank_of[e.from];
            let to = rank_of[e.to];
            bound += e.bytes_per_batch
                * if fr < placed && to < placed {
                    problem.channel_cost(assigned[fr], assigned[to])
                } else if fr < placed {
                    min_channel_from[assigned[fr]]
                } else if to < placed {
                    min_channel_from[assigned[to]]
                } else {
                    min_channel_all
                };
        }
        bound
    };

    // Greedy incumbent primes the pruning.
    let mut incumbent: Option<(f64, Vec<usize>)> = greedy_with_local_search(problem)
        .ok()
        .map(|s| (s.objective, s.assignment));

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(SearchState {
        bound: lower_bound(&[]),
        seq,
        assigned: Vec::new(),
    });
    let mut explored = 0u64;

    while let Some(state) = heap.pop() {
        explored += 1;
        if let Some((best, _)) = &incumbent {
            if state.bound >= *best - 1e-15 && state.assigned.len() < n {
                // Best-first order: nothing left can improve.
                if state.bound > *best + 1e-12 {
                    break;
                }
                if state.bound >= *best {
                    continue;
                }
            }
        }
        if state.assigned.len() == n {
            let mut assignment = vec![0; n];
            for (rank, &gpu) in state.assigned.iter().enumerate() {
                assignment[order[rank]] = gpu;
            }
            let objective = problem.objective(&assignment);
            let better = incumbent
                .as_ref()
                .is_none_or(|(best, _)| objective < *best);
            if better {
                incumbent = Some((objective, assignment));
            }
            continue;
        }

        let node = &problem.nodes[order[state.assigned.len()]];
        // Remaining capacity per GPU under the prefix.
        let mut mem_left = problem.gpu_memory.clone();
        let mut util_left = vec![1.0; g];
        for (rank, &gpu) in state.assigned.iter().enumerate() {
            mem_left[gpu] -= problem.nodes[order[rank]].memory_demand;
            util_left[gpu] -= problem.nodes[order[rank]].utilization_demand;
        }

        for gpu in 0..g {
            if node.memory_demand > mem_left[gpu] + 1e-9
                || node.utilization_demand > util_left[gpu] + 1e-9
            {
                continue;
            }
            let mut assigned = state.assigned.clone();
            assigned.push(gpu);

            // Propagate: every unassigned node must still fit somewhere,
            // and aggregate capacity must cover aggregate demand.
            let mut mem_after = mem_left.clone();
            let mut util_after = util_left.clone();
            mem_after[gpu] -= node.memory_demand;
            util_after[gpu] -= node.utilization_demand;
            let max_mem = mem_after.iter().copied().fold(0.0, f64::max);
            let max_util = util_after.iter().copied().fold(0.0, f64::max);
            let mut rest_mem = 0.0;
            let mut rest_util = 0.0;
            let mut fits = true;
            for &later in &order[assigned.len()..] {
                let nd = &problem.nodes[later];
                rest_mem += nd.memory_demand;
                rest_util += nd.utilization_demand;
                if nd.memory_demand > max_mem + 1e-9 || nd.utilization_demand > max_util + 1e-9 {
                    fits = false;
                    break;
                }
            }
            if !fits
                || rest_mem > mem_after.iter().sum::<f64>() + 1e-9
                || rest_util > util_after.iter().sum::<f64>() + 1e-9
            {
                continue;
            }

            let bound = lower_bound(&assigned);
            if let Some((best, _)) = &incumbent {
                if bound >= *best {
                    continue;
                }
            }
            seq += 1;
            heap.push(SearchState {
                bound,
                seq,
                assigned,
            });
        }
    }

    match incumbent {
        Some((objective, assignment)) => {
            problem.check_assignment(&assignment)?;
            Ok(Solution {
                assignment,
                objective,
                exact: true,
                gap: None,
                nodes_explored: explored,
            })
        }
        None => Err(Error::Infeasible(
            "branch and bound exhausted every assignment without finding a feasible placement"
                .into(),
        )),
    }
}

/// Best-fit greedy placement plus move/swap hill climbing.
pub fn greedy_with_local_search(problem: &PlacementProblem) -> Result<Solution> {
    let g = problem.num_gpus();
    let n = problem.nodes.len();

    let try_order = |key: &dyn Fn(usize) -> f64| -> Option<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
        let mut assignment = vec![usize::MAX; n];
        let mut mem_left = problem.gpu_memory.clone();
        let mut util_left = vec![1.0; g];
        for &i in &order {
            let node = &problem.nodes[i];
            let mut best: Option<(f64, f64, usize)> = None;
            for gpu in 0..g {
                if node.memory_demand > mem_left[gpu] + 1e-9
                    || node.utilization_demand > util_left[gpu] + 1e-9
                {
                    continue;
                }
                // Incremental objective against already-placed neighbors.
                let mut delta = 0.0;
                for e in &problem.edges {
                    if e.from == i && assignment[e.to] != usize::MAX {
                        delta += e.bytes_per_batch * problem.channel_cost(gpu, assignment[e.to]);
                    } else if e.to == i && assignment[e.from] != usize::MAX {
                        delta += e.bytes_per_batch * problem.channel_cost(assignment[e.from], gpu);
                    }
                }
                let key = (delta, -util_left[gpu], gpu);
                if best.is_none_or(|(d, u, bg)| {
                    key.0 < d || (key.0 == d && (key.1 < u || (key.1 == u && gpu < bg)))
                }) {
                    best = Some(key);
                }
            }
            let (_, _, gpu) = best?;
            assignment[i] = gpu;
            mem_left[gpu] -= node.memory_demand;
            util_left[gpu] -= node.utilization_demand;
        }
        Some(assignment)
    };

    let assignment = try_order(&|i| problem.nodes[i].utilization_demand)
        .or_else(|| try_order(&|i| problem.nodes[i].memory_demand))
        .ok_or_else(|| {
            Error::Infeasible("greedy placement could not fit every node".into())
        })?;

    let mut best = assignment;
    let mut best_obj = problem.objective(&best);

    // Hill climbing: single-node moves and pairwise swaps.
    for _pass in 0..50 {
        let mut improved = false;
        for i in 0..n {
            for gpu in 0..g {
                if gpu == best[i] {
                    continue;
                }
                let mut cand = best.clone();
                cand[i] = gpu;
                if problem.check_assignment(&cand).is_ok() {
                    let obj = problem.objective(&cand);
                    if obj < best_obj - 1e-15 {
                        best = cand;
                        best_obj = obj;
                        improved = true;
                    }
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if best[i] == best[j] {
                    continue;
                }
                let mut cand = best.clone();
                cand.swap(i, j);
                if problem.check_assignment(&cand).is_ok() {
                    let obj = problem.objective(&cand);
                    if obj < best_obj - 1e-15 {
                        best = cand;
                        best_obj = obj;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }

    let min_channel = (0..g)
        .flat_map(|a| (0..g).map(move |b| (a, b)))
        .map(|(a, b)| problem.channel_cost(a, b))
        .fold(f64::INFINITY, f64::min);
    let relaxation: f64 = problem
        .edges
        .iter()
        .map(|e| e.bytes_per_batch * min_channel)
        .sum();
    problem.check_assignment(&best)?;
    Ok(Solution {
        assignment: best,
        objective: best_obj,
        exact: false,
        gap: Some(best_obj - relaxation),
        nodes_explored: 0,
    })
}

/// Exhaustive reference: try every assignment. Exponential; test scale only.
pub fn brute_force(problem: &PlacementProblem) -> Option<(f64, Vec<usize>)> {
    let g = problem.num_gpus();
    let n = problem.nodes.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut assignment = vec![0usize; n];
    loop {
        if problem.check_assignment(&assignment).is_ok() {
            let obj = problem.objective(&assignment);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, assignment.clone()));
            }
        }
        // Odometer increment.
        let mut k = 0;
        loop {
            if k == n {
                return best;
            }
            assignment[k] += 1;
            if assignment[k] < g {
                break;
            }
            assignment[k] = 0;
            k += 1;
        }
    }
}
