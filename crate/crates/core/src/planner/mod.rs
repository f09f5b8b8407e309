//! Dataflow planning: profile fitting, replica sizing, and GPU placement.
//!
//! The planner turns routing statistics into a deployment: affine
//! batch-size profiles feed per-node memory/utilization demands, the
//! proportionality rule sizes replicas, and a binary program places every
//! (model, replica, partition) node on a GPU minimizing transmission
//! cost under assignment, memory, and kernel-utilization constraints.

mod problem;
mod profiles;
mod replication;
mod search;
mod solve;

pub use problem::{
    build_problem, LinearizedProgram, PlacementNode, PlacementProblem, TrafficEdge, TrafficStats,
};
pub use profiles::{
    fit_profiles, load_profile_samples, FittedLine, ModelProfileMap, ProfileMap, ProfileSample,
    ProfileSamplesFile, REFERENCE_CHANNEL_SECS_PER_BYTE,
};
pub use replication::{size_replication, ReplicationResult};
pub use search::{
    plan_search, DeploymentPlan, ObjectiveDirection, PlacedNode, PlanParams, SearchStats,
};
pub use solve::{branch_and_bound, brute_force, greedy_with_local_search, solve, Solution,
    EXACT_VARIABLE_LIMIT};
