//! Discrete-event cluster simulation of a deployed cascade.
//!
//! Requests arrive, queue at the entry model's replicas, get batched,
//! serviced through partition chains on their assigned GPUs, and routed
//! onward per replayed confidence decisions. A periodic meter integrates
//! idle and active GPU power into joules per request.

mod engine;
mod report;
mod workload;

pub use engine::{run, SimConfig};
pub use report::{compare_plans, ComparisonTable, ModelQueueStats, SimReport};
pub use workload::{ArrivalProcess, Workload};
