//! Enumeration of replica/partition combinations.
//!
//! For every partition assignment `S` (each model split across up to
//! `max_partitions` GPUs) and every replication scale step, size the
//! replicas, build the placement problem, solve it, and keep the best
//! feasible plan. Combinations that violate total memory or produce
//! unplaceable nodes are skipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::problem::{build_problem, PlacementNode, TrafficStats};
use crate::planner::profiles::ProfileMap;
use crate::planner::replication::size_replication;
use crate::planner::solve::solve;
use crate::trace::{ClusterSpec, ModelId, ModelProfile, SCHEMA_VERSION};

/// Whether to keep the lowest- or highest-objective feasible plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveDirection {
    Minimize,
    Maximize,
}

/// Planner knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanParams {
    /// Batch size the dataflow is provisioned for.
    pub batch_size: f64,
    /// Cap on partitions per model (never above the GPU count).
    pub max_partitions: usize,
    /// Replication scale multipliers to try: 1..=max_scale_steps.
    pub max_scale_steps: usize,
    pub objective: ObjectiveDirection,
    /// Multiplier on intra-GPU channel cost (zero-copy knob; 1 = off).
    pub intra_gpu_discount: f64,
}

impl Default for PlanParams {
    fn default() -> Self {
        PlanParams {
            batch_size: 8.0,
            max_partitions: 4,
            max_scale_steps: 2,
            objective: ObjectiveDirection::Minimize,
            intra_gpu_discount: 1.0,
        }
    }
}

/// Enumeration counters kept for the polynomial-cost sanity check.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SearchStats {
    pub combos_considered: u64,
    pub combos_feasible: u64,
    pub solver_nodes: u64,
}

/// One placed node in the final plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacedNode {
    pub node: PlacementNode,
    pub gpu: usize,
    pub gpu_id: String,
}

/// A complete deployment plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub schema_version: u32,
    pub models: Vec<ModelId>,
    pub replicas: Vec<usize>,
    pub partitions: Vec<usize>,
    pub placements: Vec<PlacedNode>,
    /// Transmission cost of the placement, seconds per batch.
    pub objective: f64,
    /// Optimality was proven by the exact solver.
    pub exact: bool,
    pub gap: Option<f64>,
    pub batch_size: f64,
    pub stats: SearchStats,
}

impl DeploymentPlan {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, crate::trace::to_json_bytes(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Replica counts keyed by model for quick lookups.
    pub fn replicas_of(&self, model: &ModelId) -> usize {
        self.models
            .iter()
            .position(|m| m == model)
            .map_or(0, |i| self.replicas[i])
    }
}

/// Search (R, S) combinations and return the best feasible plan.
#[allow(clippy::too_many_arguments)]
pub fn plan_search(
    models: &[ModelId],
    profiles: &[ModelProfile],
    map: &ProfileMap,
    traffic: &TrafficStats,
    latencies: &[f64],
    cluster: &ClusterSpec,
    params: &PlanParams,
) -> Result<DeploymentPlan> {
    let n = models.len();
    if n == 0 {
        return Err(Error::EmptyInput("no models to place".into()));
    }
    if traffic.reach.len() != n || latencies.len() != n {
        return Err(Error::Shape("traffic and latency lengths must match models".into()));
    }
    cluster.validate()?;
    let g = cluster.gpus.len();
    let s_max = params.max_partitions.clamp(1, g);
    let total_memory = cluster.total_memory();
    let model_memory: Vec<f64> = models
        .iter()
        .map(|m| {
            profiles
                .iter()
                .find(|p| &p.model_id == m)
                .map(|p| p.memory_bytes)
                .ok_or_else(|| Error::MissingModel(format!("no profile for {m}")))
        })
        .collect::<Result<_>>()?;

    let mut stats = SearchStats::default();
    let mut best: Option<DeploymentPlan> = None;
    let mut last_error: Option<Error> = None;

    let mut partitions = vec![1usize; n];
    loop {
        for step in 1..=params.max_scale_steps {
            stats.combos_considered += 1;
            let sized = match size_replication(
                &traffic.reach,
                latencies,
                &partitions,
                &model_memory,
                total_memory,
                step as f64,
            ) {
                Ok(r) => r,
                Err(e) => {
                    last_error = Some(e);
                    continue;
                }
            };
            let problem = match build_problem(
                models,
                profiles,
                map,
                traffic,
                &sized.replicas,
                &partitions,
                cluster,
                params.batch_size,
                params.intra_gpu_discount,
            ) {
                Ok(p) => p,
                Err(e) => {
                    last_error = Some(e);
                    continue;
                }
            };
            let solution = match solve(&problem) {
                Ok(s) => s,
                Err(e) => {
                    last_error = Some(e);
                    continue;
                }
            };
            stats.combos_feasible += 1;
            stats.solver_nodes += solution.nodes_explored;

            let replace = match &best {
                None => true,
                Some(b) => {
                    let tol = 1e-12 * b.objective.abs().max(1.0);
                    let diff = solution.objective - b.objective;
                    let better = match params.objective {
                        ObjectiveDirection::Minimize => diff < -tol,
                        ObjectiveDirection::Maximize => diff > tol,
                    };
                    // Ties (single-model plans always tie at zero) resolve
                    // toward more serving capacity.
                    let tie = diff.abs() <= tol
                        && sized.replicas.iter().sum::<usize>()
                            > b.replicas.iter().sum::<usize>();
                    better || tie
                }
            };
            if replace {
                let placements = problem
                    .nodes
                    .iter()
                    .zip(&solution.assignment)
                    .map(|(node, &gpu)| PlacedNode {
                        node: node.clone(),
                        gpu,
                        gpu_id: cluster.gpus[gpu].gpu_id.clone(),
                    })
                    .collect();
                best = Some(DeploymentPlan {
                    schema_version: SCHEMA_VERSION,
                    models: models.to_vec(),
                    replicas: sized.replicas.clone(),
                    partitions: partitions.clone(),
                    placements,
                    objective: solution.objective,
                    exact: solution.exact,
                    gap: solution.gap,
                    batch_size: params.batch_size,
                    stats: SearchStats::default(),
                });
            }
        }

        // Odometer over partition counts.
        let mut k = 0;
        loop {
            if k == n {
                let mut plan = best.ok_or_else(|| match last_error {
                    Some(e) => e,
                    None => Error::Infeasible("no feasible (R, S) combination".into()),
                })?;
                plan.stats = stats;
                return Ok(plan);
            }
            partitions[k] += 1;
            if partitions[k] <= s_max {
                break;
            }
            partitions[k] = 1;
            k += 1;
        }
    }
}
