//! Replica sizing from the zero-queueing proportionality rule.
//!
//! Zero intermediate queueing wants every stage at equal throughput,
//! which makes `R_i * S_i` proportional to the per-stage load `reach_i *
//! latency_i`. The scale anchors the least-loaded stage at one unit and
//! shrinks if total replicated memory would exceed the cluster.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sized replica counts plus the scale that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replicas: Vec<usize>,
    /// Final multiplier applied to the load vector before rounding.
    pub scale: f64,
}

/// Compute replica counts per model.
///
/// `reach[i] * latency[i]` is the load vector; `partitions[i]` divides
/// each model's target because partitioned stages already multiply
/// throughput; `model_memory` and `total_memory` bound the result.
/// `scale_multiplier` scales the whole vector up for plans that trade
/// memory for headroom (1.0 is the proportional baseline).
pub fn size_replication(
    reach: &[f64],
    latency: &[f64],
    partitions: &[usize],
    model_memory: &[f64],
    total_memory: f64,
    scale_multiplier: f64,
) -> Result<ReplicationResult> {
    let n = reach.len();
    if latency.len() != n || partitions.len() != n || model_memory.len() != n {
        return Err(Error::Shape("replication inputs must have equal length".into()));
    }
    if scale_multiplier <= 0.0 {
        return Err(Error::Invariant("scale multiplier must be positive".into()));
    }
    for (i, (&r, &l)) in reach.iter().zip(latency).enumerate() {
        if r < 0.0 || l < 0.0 {
            return Err(Error::Invariant(format!(
                "load components must be nonnegative at model {i}"
            )));
        }
        if partitions[i] == 0 {
            return Err(Error::Invariant(format!(
                "model {i} needs >= 1 partition"
            )));
        }
    }

    let load: Vec<f64> = reach.iter().zip(latency).map(|(r, l)| r * l).collect();
    let min_positive = load
        .iter()
        .copied()
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);

    let replicas_at = |scale: f64| -> Vec<usize> {
        load.iter()
            .zip(partitions)
            .map(|(&v, &s)| {
                let target = v * scale / s as f64;
                (target.round() as usize).max(1)
            })
            .collect()
    };
    let memory_of = |replicas: &[usize]| -> f64 {
        replicas
            .iter()
            .zip(model_memory)
            .map(|(&r, &m)| r as f64 * m)
            .sum()
    };

    let mut scale = if min_positive.is_finite() {
        scale_multiplier / min_positive
    } else {
        0.0
    };
    let mut replicas = replicas_at(scale);
    // Shrink geometrically until the memory bound holds; the all-ones
    // floor is the last stop before infeasibility.
    for _ in 0..512 {
        if memory_of(&replicas) <= total_memory {
            return Ok(ReplicationResult { replicas, scale });
        }
        if replicas.iter().all(|&r| r == 1) {
            break;
        }
        scale *= 0.9;
        replicas = replicas_at(scale);
    }
    if memory_of(&replicas) <= total_memory {
        return Ok(ReplicationResult { replicas, scale });
    }
    Err(Error::Infeasible(format!(
        "one replica set of every model needs {} bytes but the cluster holds {}",
        memory_of(&replicas_at(0.0)),
        total_memory
    )))
}
