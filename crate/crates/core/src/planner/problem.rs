//! GPU placement problem construction.
//!
//! Every (model, replica, partition) triple becomes a placement node with
//! memory and utilization demands evaluated at its reach-scaled batch
//! size. Traffic edges carry per-batch bytes: partition chains move
//! hidden state between consecutive partitions of one replica, and router
//! edges move predictions from a model's final partition to the entry
//! partition of a downstream model. Placing the two ends of an edge on
//! GPUs `g, g'` costs `T(g,g') * bytes`; the quadratic terms linearize
//! into standard product variables for the solver.

use serde::{Deserialize, Serialize};

use crate::cascade::ForwardEdge;
use crate::error::{Error, Result};
use crate::planner::profiles::ProfileMap;
use crate::trace::{ClusterSpec, ModelId, ModelProfile};

/// One placement node: a partition of one replica of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementNode {
    pub node_id: usize,
    pub model: ModelId,
    pub replica: usize,
    pub partition: usize,
    /// Bytes this node needs resident.
    pub memory_demand: f64,
    /// Kernel-utilization fraction this node adds to its GPU.
    pub utilization_demand: f64,
}

/// Directed traffic edge between two nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficEdge {
    pub from: usize,
    pub to: usize,
    pub bytes_per_batch: f64,
}

/// The binary placement program.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacementProblem {
    pub nodes: Vec<PlacementNode>,
    pub gpu_memory: Vec<f64>,
    /// Seconds per byte between GPU pairs.
    pub channel: Vec<Vec<f64>>,
    pub edges: Vec<TrafficEdge>,
    /// Multiplier on the intra-GPU channel cost (zero-copy knob; 1 = off).
    pub intra_gpu_discount: f64,
}

impl PlacementProblem {
    pub fn num_gpus(&self) -> usize {
        self.gpu_memory.len()
    }

    /// Effective channel cost between two GPUs.
    pub fn channel_cost(&self, g: usize, h: usize) -> f64 {
        let c = self.channel[g][h];
        if g == h {
            c * self.intra_gpu_discount
        } else {
            c
        }
    }

    /// Transmission objective of a complete assignment, seconds per batch.
    pub fn objective(&self, assignment: &[usize]) -> f64 {
        self.edges
            .iter()
            .map(|e| e.bytes_per_batch * self.channel_cost(assignment[e.from], assignment[e.to]))
            .sum()
    }

    /// Check the assignment, memory, and utilization constraints.
    pub fn check_assignment(&self, assignment: &[usize]) -> Result<()> {
        if assignment.len() != self.nodes.len() {
            return Err(Error::Shape("assignment length mismatch".into()));
        }
        let g = self.num_gpus();
        let mut mem = vec![0.0; g];
        let mut util = vec![0.0; g];
        for (node, &gpu) in self.nodes.iter().zip(assignment) {
            if gpu >= g {
                return Err(Error::Invariant(format!(
                    "node {} assigned to unknown GPU {gpu}",
                    node.node_id
                )));
            }
            mem[gpu] += node.memory_demand;
            util[gpu] += node.utilization_demand;
        }
        for gpu in 0..g {
            if mem[gpu] > self.gpu_memory[gpu] * (1.0 + 1e-9) {
                return Err(Error::Infeasible(format!(
                    "GPU {gpu} memory exceeded: {} > {}",
                    mem[gpu], self.gpu_memory[gpu]
                )));
            }
            if util[gpu] > 1.0 + 1e-9 {
                return Err(Error::Infeasible(format!(
                    "GPU {gpu} kernel utilization exceeded: {}",
                    util[gpu]
                )));
            }
        }
        Ok(())
    }

    /// Structural feasibility screens cheap enough to run before solving.
    pub fn validate(&self) -> Result<()> {
        let g = self.num_gpus();
        if g == 0 {
            return Err(Error::Invariant("no GPUs in the problem".into()));
        }
        if self.channel.len() != g || self.channel.iter().any(|r| r.len() != g) {
            return Err(Error::Shape("channel matrix shape mismatch".into()));
        }
        let max_mem = self.gpu_memory.iter().copied().fold(0.0, f64::max);
        for node in &self.nodes {
            if node.memory_demand > max_mem {
                return Err(Error::Infeasible(format!(
                    "node {} ({} partition {}) needs {} bytes, more than any GPU",
                    node.node_id, node.model, node.partition, node.memory_demand
                )));
            }
            if node.utilization_demand > 1.0 + 1e-9 {
                return Err(Error::Infeasible(format!(
                    "node {} demands kernel utilization {} > 1",
                    node.node_id, node.utilization_demand
                )));
            }
        }
        let total_mem: f64 = self.gpu_memory.iter().sum();
        let need_mem: f64 = self.nodes.iter().map(|n| n.memory_demand).sum();
        if need_mem > total_mem {
            return Err(Error::Infeasible(format!(
                "nodes need {need_mem} bytes total, cluster holds {total_mem}"
            )));
        }
        let need_util: f64 = self.nodes.iter().map(|n| n.utilization_demand).sum();
        if need_util > g as f64 + 1e-9 {
            return Err(Error::Infeasible(format!(
                "total kernel utilization {need_util} exceeds {g} GPUs"
            )));
        }
        for e in &self.edges {
            if e.from >= self.nodes.len() || e.to >= self.nodes.len() {
                return Err(Error::Shape("edge references unknown node".into()));
            }
        }
        Ok(())
    }

    /// Explicit product linearization of the quadratic objective:
    /// `y[e,g,h] = x[from(e),g] * x[to(e),h]` under the standard triple
    /// `y <= x1`, `y <= x2`, `y >= x1 + x2 - 1`.
    pub fn linearize(&self) -> LinearizedProgram {
        let g = self.num_gpus();
        let mut y_costs = Vec::with_capacity(self.edges.len() * g * g);
        for e in &self.edges {
            for gg in 0..g {
                for hh in 0..g {
                    y_costs.push(e.bytes_per_batch * self.channel_cost(gg, hh));
                }
            }
        }
        LinearizedProgram {
            num_nodes: self.nodes.len(),
            num_gpus: g,
            num_edges: self.edges.len(),
            y_costs,
        }
    }
}

/// The linearized binary program: `x` assignment variables plus `y`
/// product variables, one per (edge, GPU pair).
#[derive(Debug, Clone)]
pub struct LinearizedProgram {
    pub num_nodes: usize,
    pub num_gpus: usize,
    pub num_edges: usize,
    /// Objective coefficient of `y[e,g,h]`, laid out edge-major.
    pub y_costs: Vec<f64>,
}

impl LinearizedProgram {
    pub fn num_x(&self) -> usize {
        self.num_nodes * self.num_gpus
    }

    pub fn num_y(&self) -> usize {
        self.num_edges * self.num_gpus * self.num_gpus
    }

    /// Objective at an integer assignment, with each `y` forced to the
    /// product of its `x` pair. Used to confirm the linearization and the
    /// quadratic form agree on integer points.
    pub fn objective_at(&self, problem: &PlacementProblem, assignment: &[usize]) -> f64 {
        let g = self.num_gpus;
        let mut total = 0.0;
        for (ei, e) in problem.edges.iter().enumerate() {
            let y_index = ei * g * g + assignment[e.from] * g + assignment[e.to];
            total += self.y_costs[y_index];
        }
        total
    }
}

/// Everything `build_problem` needs about cascade traffic.
#[derive(Debug, Clone)]
pub struct TrafficStats {
    /// Fraction of requests that execute on each model.
    pub reach: Vec<f64>,
    /// Fractions forwarded along router edges (model index pairs).
    pub forward: Vec<ForwardEdge>,
}

/// Build the placement problem for given replica/partition counts at
/// batch size `b`.
#[allow(clippy::too_many_arguments)]
pub fn build_problem(
    models: &[ModelId],
    profiles: &[ModelProfile],
    map: &ProfileMap,
    traffic: &TrafficStats,
    replicas: &[usize],
    partitions: &[usize],
    cluster: &ClusterSpec,
    batch: f64,
    intra_gpu_discount: f64,
) -> Result<PlacementProblem> {
    let n = models.len();
    if traffic.reach.len() != n || replicas.len() != n || partitions.len() != n {
        return Err(Error::Shape(
            "models, reach, replicas, partitions must have equal length".into(),
        ));
    }
    if batch <= 0.0 {
        return Err(Error::Invariant("batch size must be positive".into()));
    }

    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    // first_node[i] is the node_id of (model i, replica 0, partition 0).
    let mut first_node = Vec::with_capacity(n);

    for (i, model) in models.iter().enumerate() {
        let m = map.get(model)?;
        let scaled_batch = (traffic.reach[i] * batch).max(0.0);
        let memory = m.memory_at(scaled_batch) / partitions[i] as f64;
        let util = m.utilization_at(scaled_batch) / replicas[i] as f64;
        first_node.push(nodes.len());
        for r in 0..replicas[i] {
            for s in 0..partitions[i] {
                nodes.push(PlacementNode {
                    node_id: nodes.len(),
                    model: model.clone(),
                    replica: r,
                    partition: s,
                    memory_demand: memory,
                    utilization_demand: util,
                });
            }
        }
        // Hidden-state traffic between consecutive partitions of one
        // replica, split evenly across replicas.
        if partitions[i] > 1 {
            let hidden_bytes = m.transfer_bytes_at(scaled_batch) / replicas[i] as f64;
            for r in 0..replicas[i] {
                let base = first_node[i] + r * partitions[i];
                for s in 0..partitions[i] - 1 {
                    edges.push(TrafficEdge {
                        from: base + s,
                        to: base + s + 1,
                        bytes_per_batch: hidden_bytes,
                    });
                }
            }
        }
    }

    // Router traffic: final partition of each replica of `from` to the
    // first partition of each replica of `to`, split evenly.
    for f in &traffic.forward {
        let (i, j) = (f.from, f.to);
        if i >= n || j >= n {
            return Err(Error::Shape("forward edge references unknown model".into()));
        }
        let p = profiles
            .iter()
            .find(|p| p.model_id == models[i])
            .ok_or_else(|| Error::MissingModel(format!("no profile for {}", models[i])))?;
        let total_bytes = p.output_bytes * f.fraction * batch;
        let share = total_bytes / (replicas[i] * replicas[j]) as f64;
        if share <= 0.0 {
            continue;
        }
        for ri in 0..replicas[i] {
            let from = first_node[i] + ri * partitions[i] + (partitions[i] - 1);
            for rj in 0..replicas[j] {
                let to = first_node[j] + rj * partitions[j];
                edges.push(TrafficEdge {
                    from,
                    to,
                    bytes_per_batch: share,
                });
            }
        }
    }

    let problem = PlacementProblem {
        nodes,
        gpu_memory: cluster.gpus.iter().map(|g| g.memory_bytes).collect(),
        channel: cluster.transmission_secs_per_byte.clone(),
        edges,
        intra_gpu_discount,
    };
    problem.validate()?;
    Ok(problem)
}
