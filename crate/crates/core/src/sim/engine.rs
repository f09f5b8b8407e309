//! The event loop.
//!
//! Single logical timeline: a binary heap of timestamped events with a
//! deterministic sequence tie-break. Batches move through partition
//! chains stage by stage; each stage occupies its GPU's kernel timeline
//! for `u(b)` of its service window, so co-located stages only contend
//! when their summed demand exceeds the GPU. Replicas accept the next
//! batch once their first stage frees (stage pipelining).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeConfig, ScoredTrace};
use crate::error::{Error, Result};
use crate::planner::{DeploymentPlan, ProfileMap};
use crate::sim::report::{ModelQueueStats, SimReport, UtilSample};
use crate::sim::workload::Workload;
use crate::trace::{ClusterSpec, ModelProfile, SCHEMA_VERSION};

const EPS: f64 = 1e-12;

/// Service-side simulation knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Dispatch a batch at this size even if the wait budget remains.
    pub max_batch: usize,
    /// Dispatch when the oldest queued request has waited this long.
    pub max_wait: f64,
    /// Router seconds added on every entry into a model's queue.
    pub hop_overhead: f64,
    /// Energy meter sampling period in seconds.
    pub meter_period: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            max_batch: 8,
            max_wait: 0.010,
            hop_overhead: 1e-3,
            meter_period: 0.1,
        }
    }
}

#[derive(Debug)]
enum Ev {
    Arrival { request: usize },
    Dispatch { model: usize, replica: usize },
    ServiceDone { batch: usize },
    Transfer { model: usize, replica: usize, requests: Vec<usize> },
    Meter,
}

struct Timed {
    time: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Timed {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Timed {}
impl PartialOrd for Timed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Timed {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

struct Request {
    record: usize,
    arrival: f64,
    /// Index into the record's routing path.
    pos: usize,
    completed: bool,
}

struct Replica {
    /// GPU per partition, in chain order.
    gpus: Vec<usize>,
    queue: VecDeque<(usize, f64)>,
    next_free: f64,
}

struct ModelSim {
    replicas: Vec<Replica>,
    rr: usize,
    output_bytes: f64,
}

struct GpuSim {
    kernel_free_at: f64,
    /// Kernel-busy intervals not yet fully metered, sorted by start.
    intervals: VecDeque<(f64, f64)>,
    joules: f64,
    busy_secs: f64,
}

struct Batch {
    model: usize,
    replica: usize,
    requests: Vec<usize>,
}

/// Precompute each record's routing path and final correctness.
pub fn routing_paths(
    scored: &ScoredTrace,
    cascade: &CascadeConfig,
) -> Result<Vec<(Vec<usize>, bool)>> {
    cascade.validate()?;
    let cols: Vec<usize> = cascade
        .models
        .iter()
        .map(|m| {
            scored
                .models
                .iter()
                .position(|x| x == m)
                .ok_or_else(|| Error::MissingModel(format!("{m} not in scored trace")))
        })
        .collect::<Result<_>>()?;
    let n = cascade.len();
    let mut paths = Vec::with_capacity(scored.len());
    for r in 0..scored.len() {
        let mut path = Vec::new();
        let mut i = 0;
        loop {
            path.push(i);
            let score = scored.scores[r][cols[i]];
            if i == n - 1 || score >= cascade.thresholds[i] {
                break;
            }
            let mut next = i + 1;
            for band in &cascade.skip_bands[i] {
                if score >= band.lower {
                    next = band.dest;
                    break;
                }
            }
            i = next;
        }
        let correct = scored.correct[r][cols[*path.last().expect("nonempty path")]];
        paths.push((path, correct));
    }
    Ok(paths)
}

/// Run one simulation.
#[allow(clippy::too_many_arguments)]
pub fn run(
    plan: &DeploymentPlan,
    cascade: &CascadeConfig,
    scored: &ScoredTrace,
    map: &ProfileMap,
    profiles: &[ModelProfile],
    cluster: &ClusterSpec,
    workload: &Workload,
    config: &SimConfig,
) -> Result<SimReport> {
    cluster.validate()?;
    workload.validate()?;
    if scored.is_empty() {
        return Err(Error::EmptyInput("simulation needs a nonempty trace".into()));
    }
    if config.max_batch == 0 || config.meter_period <= 0.0 || config.max_wait < 0.0 {
        return Err(Error::Invariant("bad simulation config".into()));
    }

    // Resolve each cascade model's replica chains from the plan.
    let mut models: Vec<ModelSim> = Vec::with_capacity(cascade.len());
    let mut maps = Vec::with_capacity(cascade.len());
    let mut partitions = Vec::with_capacity(cascade.len());
    for m in &cascade.models {
        let pi = plan
            .models
            .iter()
            .position(|x| x == m)
            .ok_or_else(|| Error::Invariant(format!("cascade model {m} absent from plan")))?;
        let (r_count, s_count) = (plan.replicas[pi], plan.partitions[pi]);
        let mut replicas = Vec::with_capacity(r_count);
        for r in 0..r_count {
            let mut chain: Vec<(usize, usize)> = plan
                .placements
                .iter()
                .filter(|p| p.node.model == *m && p.node.replica == r)
                .map(|p| (p.node.partition, p.gpu))
                .collect();
            chain.sort_by_key(|(s, _)| *s);
            if chain.len() != s_count || chain.iter().enumerate().any(|(k, (s, _))| k != *s) {
                return Err(Error::Invariant(format!(
                    "plan leaves {m} replica {r} partially unplaced"
                )));
            }
            replicas.push(Replica {
                gpus: chain.into_iter().map(|(_, g)| g).collect(),
                queue: VecDeque::new(),
                next_free: 0.0,
            });
        }
        if replicas.is_empty() {
            return Err(Error::Invariant(format!("plan has zero replicas of {m}")));
        }
        let profile = profiles
            .iter()
            .find(|p| &p.model_id == m)
            .ok_or_else(|| Error::MissingModel(format!("no profile for {m}")))?;
        models.push(ModelSim {
            replicas,
            rr: 0,
            output_bytes: profile.output_bytes,
        });
        maps.push(map.get(m)?.clone());
        partitions.push(s_count);
    }

    let paths = routing_paths(scored, cascade)?;
    let arrivals = workload.arrival_times()?;
    let channel = &cluster.transmission_secs_per_byte;

    let mut gpus: Vec<GpuSim> = cluster
        .gpus
        .iter()
        .map(|_| GpuSim {
            kernel_free_at: 0.0,
            intervals: VecDeque::new(),
            joules: 0.0,
            busy_secs: 0.0,
        })
        .collect();

    let mut requests: Vec<Request> = Vec::with_capacity(arrivals.len());
    let mut batches: Vec<Batch> = Vec::new();
    let mut heap: BinaryHeap<Timed> = BinaryHeap::new();
    let mut seq = 0u64;
    let push = |heap: &mut BinaryHeap<Timed>, seq: &mut u64, time: f64, ev: Ev| {
        *seq += 1;
        heap.push(Timed {
            time,
            seq: *seq,
            ev,
        });
    };

    for (k, &t) in arrivals.iter().enumerate() {
        requests.push(Request {
            record: k % scored.len(),
            arrival: t,
            pos: 0,
            completed: false,
        });
        push(&mut heap, &mut seq, t, Ev::Arrival { request: k });
    }
    // Meter ticks across the horizon plus a final partial tick.
    let mut tick = config.meter_period;
    while tick < workload.duration - EPS {
        push(&mut heap, &mut seq, tick, Ev::Meter);
        tick += config.meter_period;
    }
    push(&mut heap, &mut seq, workload.duration, Ev::Meter);

    // Aggregates.
    let n_models = cascade.len();
    let mut reach = vec![0u64; n_models];
    let mut wait_sum = vec![0.0; n_models];
    let mut wait_count = vec![0u64; n_models];
    let mut service_sum = vec![0.0; n_models];
    let mut batch_count = vec![0u64; n_models];
    let mut batch_size_sum = vec![0u64; n_models];
    let mut latencies: Vec<f64> = Vec::new();
    let mut completed = 0u64;
    let mut in_system = 0u64;
    let mut in_system_area = 0.0;
    let mut last_change = 0.0;
    let mut prev_meter = 0.0;
    let mut series: Vec<UtilSample> = Vec::new();

    // Queue a dispatch check for a replica.
    macro_rules! schedule_dispatch {
        ($heap:expr, $seq:expr, $time:expr, $model:expr, $replica:expr) => {
            push(
                $heap,
                $seq,
                $time,
                Ev::Dispatch {
                    model: $model,
                    replica: $replica,
                },
            )
        };
    }

    while let Some(Timed { time, ev, .. }) = heap.pop() {
        if time > workload.duration + EPS {
            break;
        }
        match ev {
            Ev::Arrival { request } => {
                in_system_area += in_system as f64 * (time - last_change);
                last_change = time;
                in_system += 1;

                let model = paths[requests[request].record].0[0];
                let enq = time + config.hop_overhead;
                let rr = models[model].rr;
                let r_count = models[model].replicas.len();
                models[model].rr = (rr + 1) % r_count;
                reach[model] += 1;
                models[model].replicas[rr].queue.push_back((request, enq));
                let replica = &models[model].replicas[rr];
                let when = if replica.queue.len() >= config.max_batch {
                    enq.max(replica.next_free)
                } else {
                    (replica.queue[0].1 + config.max_wait).max(replica.next_free)
                };
                schedule_dispatch!(&mut heap, &mut seq, when, model, rr);
            }
            Ev::Transfer {
                model,
                replica,
                requests: reqs,
            } => {
                let enq = time + config.hop_overhead;
                reach[model] += reqs.len() as u64;
                for req in reqs {
                    models[model].replicas[replica].queue.push_back((req, enq));
                }
                let rep = &models[model].replicas[replica];
                let when = if rep.queue.len() >= config.max_batch {
                    enq.max(rep.next_free)
                } else {
                    (rep.queue[0].1 + config.max_wait).max(rep.next_free)
                };
                schedule_dispatch!(&mut heap, &mut seq, when, model, replica);
            }
            Ev::Dispatch { model, replica } => {
                let rep = &models[model].replicas[replica];
                if rep.queue.is_empty() {
                    continue;
                }
                if time + EPS < rep.next_free {
                    let at = rep.next_free;
                    schedule_dispatch!(&mut heap, &mut seq, at, model, replica);
                    continue;
                }
                let oldest = rep.queue[0].1;
                if oldest > time + EPS {
                    // Enqueue timestamp (with hop overhead) not reached yet.
                    let at = if rep.queue.len() >= config.max_batch {
                        oldest
                    } else {
                        oldest + config.max_wait
                    };
                    schedule_dispatch!(&mut heap, &mut seq, at, model, replica);
                    continue;
                }
                if rep.queue.len() < config.max_batch && oldest + config.max_wait > time + EPS {
                    let at = (oldest + config.max_wait).max(rep.next_free);
                    schedule_dispatch!(&mut heap, &mut seq, at, model, replica);
                    continue;
                }

                // Take the batch.
                let k = rep.queue.len().min(config.max_batch);
                let rep = &mut models[model].replicas[replica];
                let mut members = Vec::with_capacity(k);
                for _ in 0..k {
                    let (req, enq) = rep.queue.pop_front().expect("nonempty");
                    wait_sum[model] += time - enq;
                    wait_count[model] += 1;
                    members.push(req);
                }
                let b = k as f64;
                let m = &maps[model];
                let s_count = partitions[model];
                let window = m.latency_at(b) / s_count as f64;
                let kernel = m.utilization_at(b) * window;
                let hidden_bytes = m.transfer_bytes_at(b);
                let chain: Vec<usize> = rep.gpus.clone();

                let mut cursor = time;
                for (s, &gpu) in chain.iter().enumerate() {
                    if s > 0 {
                        cursor += channel[chain[s - 1]][gpu] * hidden_bytes;
                    }
                    let g = &mut gpus[gpu];
                    let kernel_start = cursor.max(g.kernel_free_at);
                    let kernel_end = kernel_start + kernel;
                    g.kernel_free_at = kernel_end;
                    g.intervals.push_back((kernel_start, kernel_end));
                    let stage_done = (cursor + window).max(kernel_end);
                    if s == 0 {
                        models[model].replicas[replica].next_free = stage_done;
                    }
                    cursor = stage_done;
                }
                service_sum[model] += cursor - time;
                batch_count[model] += 1;
                batch_size_sum[model] += k as u64;

                let batch_id = batches.len();
                batches.push(Batch {
                    model,
                    replica,
                    requests: members,
                });
                push(&mut heap, &mut seq, cursor, Ev::ServiceDone { batch: batch_id });

                let rep = &models[model].replicas[replica];
                if !rep.queue.is_empty() {
                    let oldest = rep.queue[0].1;
                    let at = if rep.queue.len() >= config.max_batch {
                        time.max(rep.next_free)
                    } else {
                        (oldest + config.max_wait).max(rep.next_free)
                    };
                    schedule_dispatch!(&mut heap, &mut seq, at, model, replica);
                }
            }
            Ev::ServiceDone { batch } => {
                let Batch {
                    model,
                    replica,
                    requests: members,
                } = std::mem::replace(
                    &mut batches[batch],
                    Batch {
                        model: 0,
                        replica: 0,
                        requests: Vec::new(),
                    },
                );
                // Group escalations per (destination, destination replica).
                let mut groups: Vec<(usize, usize, Vec<usize>)> = Vec::new();
                for req in members {
                    let path = &paths[requests[req].record].0;
                    let pos = requests[req].pos;
                    debug_assert_eq!(path[pos], model);
                    if pos + 1 == path.len() {
                        requests[req].completed = true;
                        completed += 1;
                        latencies.push(time - requests[req].arrival);
                        in_system_area += in_system as f64 * (time - last_change);
                        last_change = time;
                        in_system -= 1;
                        continue;
                    }
                    let dest = path[pos + 1];
                    requests[req].pos += 1;
                    let rr = models[dest].rr;
                    models[dest].rr = (rr + 1) % models[dest].replicas.len();
                    match groups.iter_mut().find(|(d, r, _)| *d == dest && *r == rr) {
                        Some((_, _, list)) => list.push(req),
                        None => groups.push((dest, rr, vec![req])),
                    }
                }
                let src_gpu = *models[model].replicas[replica]
                    .gpus
                    .last()
                    .expect("nonempty chain");
                for (dest, r, list) in groups {
                    let dst_gpu = models[dest].replicas[r].gpus[0];
                    let bytes = models[model].output_bytes * list.len() as f64;
                    let delay = channel[src_gpu][dst_gpu] * bytes;
                    push(
                        &mut heap,
                        &mut seq,
                        time + delay,
                        Ev::Transfer {
                            model: dest,
                            replica: r,
                            requests: list,
                        },
                    );
                }
            }
            Ev::Meter => {
                let dt = time - prev_meter;
                if dt > EPS {
                    for (gi, g) in gpus.iter_mut().enumerate() {
                        let mut busy = 0.0;
                        while let Some(&(s, e)) = g.intervals.front() {
                            if e <= time + EPS {
                                busy += (e.min(time) - s.max(prev_meter)).max(0.0);
                                g.intervals.pop_front();
                            } else {
                                break;
                            }
                        }
                        for &(s, e) in g.intervals.iter() {
                            if s >= time {
                                break;
                            }
                            busy += (e.min(time) - s.max(prev_meter)).max(0.0);
                        }
                        let spec = &cluster.gpus[gi];
                        g.joules += spec.idle_power_watts * dt
                            + (spec.active_power_watts - spec.idle_power_watts) * busy;
                        g.busy_secs += busy;
                        series.push(UtilSample {
                            time,
                            gpu: gi,
                            busy_fraction: busy / dt,
                        });
                    }
                    prev_meter = time;
                }
            }
        }
    }

    // Close the in-system integral at the horizon.
    in_system_area += in_system as f64 * (workload.duration - last_change);

    let arrived = requests.len() as u64;
    let in_flight = requests.iter().filter(|r| !r.completed).count() as u64;
    debug_assert_eq!(arrived, completed + in_flight);

    let mut sorted = latencies.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mean_latency = if sorted.is_empty() {
        None
    } else {
        Some(sorted.iter().sum::<f64>() / sorted.len() as f64)
    };
    let p999 = if sorted.is_empty() {
        None
    } else {
        let idx = ((sorted.len() as f64 * 0.999).ceil() as usize).clamp(1, sorted.len()) - 1;
        Some(sorted[idx])
    };
    let total_joules: f64 = gpus.iter().map(|g| g.joules).sum();
    let mut histogram = Vec::new();
    for l in &latencies {
        let bin = (l * 1000.0).floor() as usize;
        if bin >= histogram.len() {
            histogram.resize(bin + 1, 0u64);
        }
        histogram[bin] += 1;
    }

    let queue_stats: Vec<ModelQueueStats> = (0..n_models)
        .map(|i| ModelQueueStats {
            model: cascade.models[i].clone(),
            mean_queue_wait: if wait_count[i] > 0 {
                Some(wait_sum[i] / wait_count[i] as f64)
            } else {
                None
            },
            mean_batch_service: if batch_count[i] > 0 {
                Some(service_sum[i] / batch_count[i] as f64)
            } else {
                None
            },
            mean_batch_size: if batch_count[i] > 0 {
                Some(batch_size_sum[i] as f64 / batch_count[i] as f64)
            } else {
                None
            },
        })
        .collect();

    let report = SimReport {
        schema_version: SCHEMA_VERSION,
        duration: workload.duration,
        arrived,
        completed,
        in_flight,
        throughput: completed as f64 / workload.duration,
        mean_latency,
        p999_latency: p999,
        joules_per_request: if arrived > 0 {
            Some(total_joules / arrived as f64)
        } else {
            None
        },
        total_joules,
        per_gpu_joules: gpus.iter().map(|g| g.joules).collect(),
        per_gpu_busy_fraction: gpus
            .iter()
            .map(|g| g.busy_secs / workload.duration)
            .collect(),
        reach_fraction: reach
            .iter()
            .map(|&r| if arrived > 0 { r as f64 / arrived as f64 } else { 0.0 })
            .collect(),
        mean_in_system: in_system_area / workload.duration,
        queue_stats,
        utilization_series: series,
        latency_histogram_ms: histogram,
    };
    report.check()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::calibrate_family;
    use crate::planner::{PlacedNode, PlacementNode, ProfileMap};
    use crate::sim::workload::ArrivalProcess;
    use crate::trace::{
        generate_synthetic_trace, AffineCoeffs, GpuSpec, JointAccuracySpec, ModelId, TaskKind,
    };

    fn profile(id: &str, latency: f64, util: f64) -> ModelProfile {
        ModelProfile {
            model_id: ModelId::new(id),
            param_count: 100,
            standalone_accuracy: 0.8,
            energy_per_request: 1.0,
            service_latency: latency,
            memory_bytes: 1e9,
            utilization_coeffs: AffineCoeffs {
                slope: 0.0,
                intercept: util,
            },
            transmission_coeffs: AffineCoeffs {
                slope: 0.0,
                intercept: 1e-6,
            },
            output_bytes: 5e4,
            memory_slope: 0.0,
            latency_slope: 0.0,
        }
    }

    fn cluster(gpus: usize) -> ClusterSpec {
        ClusterSpec {
            schema_version: SCHEMA_VERSION,
            gpus: (0..gpus)
                .map(|i| GpuSpec {
                    gpu_id: format!("g{i}"),
                    memory_bytes: 32e9,
                    idle_power_watts: 50.0,
                    active_power_watts: 250.0,
                })
                .collect(),
            transmission_secs_per_byte: (0..gpus)
                .map(|a| {
                    (0..gpus)
                        .map(|b| if a == b { 1e-11 } else { 2e-9 })
                        .collect()
                })
                .collect(),
        }
    }

    /// Hand-built plan: each model gets `replicas[i]` single-partition
    /// replicas placed round-robin over the GPUs.
    fn manual_plan(models: &[ModelId], replicas: &[usize], gpus: usize) -> DeploymentPlan {
        let mut placements = Vec::new();
        let mut gpu = 0;
        for (i, m) in models.iter().enumerate() {
            for r in 0..replicas[i] {
                placements.push(PlacedNode {
                    node: PlacementNode {
                        node_id: placements.len(),
                        model: m.clone(),
                        replica: r,
                        partition: 0,
                        memory_demand: 1e9,
                        utilization_demand: 0.5,
                    },
                    gpu,
                    gpu_id: format!("g{gpu}"),
                });
                gpu = (gpu + 1) % gpus;
            }
        }
        DeploymentPlan {
            schema_version: SCHEMA_VERSION,
            models: models.to_vec(),
            replicas: replicas.to_vec(),
            partitions: vec![1; models.len()],
            placements,
            objective: 0.0,
            exact: true,
            gap: None,
            batch_size: 8.0,
            stats: Default::default(),
        }
    }

    fn single_model_setup() -> (ScoredTrace, CascadeConfig, Vec<ModelProfile>) {
        let spec = JointAccuracySpec {
            task: TaskKind::Classification,
            class_count: 4,
            gen_steps: 1,
            model_ids: vec![ModelId::new("solo")],
            marginals: vec![0.8],
            contributions: vec![0.8],
            overlap: 0.2,
        };
        let trace = generate_synthetic_trace(&spec, 50, 3).unwrap();
        let calib = calibrate_family(&trace).unwrap();
        let scored = ScoredTrace::new(&trace, &calib).unwrap();
        let cascade = CascadeConfig {
            models: vec![ModelId::new("solo")],
            thresholds: vec![0.0],
            skip_bands: vec![Vec::new()],
        };
        let profiles = vec![profile("solo", 0.02, 1.0)];
        (scored, cascade, profiles)
    }

    #[test]
    fn zero_arrivals_accumulate_idle_energy_only() {
        let (scored, cascade, profiles) = single_model_setup();
        let plan = manual_plan(&cascade.models, &[1], 1);
        let map = ProfileMap::from_coeffs(&profiles, 16.0);
        let cl = cluster(1);
        let workload = Workload {
            arrivals: ArrivalProcess::Replay { timestamps: vec![] },
            duration: 2.0,
            seed: 0,
        };
        let report = run(
            &plan,
            &cascade,
            &scored,
            &map,
            &profiles,
            &cl,
            &workload,
            &SimConfig::default(),
        )
        .unwrap();
        assert_eq!(report.arrived, 0);
        assert!(report.joules_per_request.is_none());
        // Exactly idle power times duration.
        assert!((report.total_joules - 50.0 * 2.0).abs() < 1e-9);
    }

    #[test]
    fn md1_busy_fraction_matches_offered_load() {
        let (scored, cascade, profiles) = single_model_setup();
        let plan = manual_plan(&cascade.models, &[1], 1);
        let map = ProfileMap::from_coeffs(&profiles, 16.0);
        let cl = cluster(1);
        // lambda * l = 25 * 0.02 = 0.5; ~10^4 requests over 400 s.
        let workload = Workload {
            arrivals: ArrivalProcess::Poisson { rate: 25.0 },
            duration: 400.0,
            seed: 11,
        };
        let config = SimConfig {
            max_batch: 1,
            max_wait: 0.0,
            hop_overhead: 0.0,
            meter_period: 0.1,
        };
        let report = run(
            &plan, &cascade, &scored, &map, &profiles, &cl, &workload, &config,
        )
        .unwrap();
        assert!(report.arrived > 9000, "arrived {}", report.arrived);
        let busy = report.per_gpu_busy_fraction[0];
        assert!((busy - 0.5).abs() <= 0.02, "busy fraction {busy}");
        // Little's law within 5%.
        let lambda = report.arrived as f64 / report.duration;
        let expected = lambda * report.mean_latency.unwrap();
        let err = (report.mean_in_system - expected).abs() / expected;
        assert!(err < 0.05, "little's law error {err}");
        // Conservation is exact.
        assert_eq!(report.arrived, report.completed + report.in_flight);
    }

    #[test]
    fn energy_is_idle_plus_active_and_sums_per_gpu() {
        let (scored, cascade, profiles) = single_model_setup();
        let plan = manual_plan(&cascade.models, &[1], 2);
        let map = ProfileMap::from_coeffs(&profiles, 16.0);
        let cl = cluster(2);
        let workload = Workload {
            arrivals: ArrivalProcess::Poisson { rate: 10.0 },
            duration: 20.0,
            seed: 5,
        };
        let report = run(
            &plan,
            &cascade,
            &scored,
            &map,
            &profiles,
            &cl,
            &workload,
            &SimConfig::default(),
        )
        .unwrap();
        let idle_floor = 50.0 * 20.0;
        for (j, busy) in report
            .per_gpu_joules
            .iter()
            .zip(&report.per_gpu_busy_fraction)
        {
            assert!(*j >= idle_floor - 1e-9);
            let expected = idle_floor + 200.0 * busy * 20.0;
            assert!((j - expected).abs() < 1e-6, "{j} vs {expected}");
        }
        let sum: f64 = report.per_gpu_joules.iter().sum();
        assert!((sum - report.total_joules).abs() < 1e-9);
    }

    fn two_model_setup() -> (ScoredTrace, Vec<ModelId>, Vec<ModelProfile>) {
        let spec = JointAccuracySpec {
            task: TaskKind::Classification,
            class_count: 4,
            gen_steps: 1,
            model_ids: vec![ModelId::new("small"), ModelId::new("giant")],
            marginals: vec![0.7, 0.9],
            contributions: vec![0.7, 0.2],
            overlap: 0.15,
        };
        let trace = generate_synthetic_trace(&spec, 500, 13).unwrap();
        let calib = calibrate_family(&trace).unwrap();
        let scored = ScoredTrace::new(&trace, &calib).unwrap();
        let profiles = vec![profile("small", 0.002, 1.0), profile("giant", 0.08, 1.0)];
        (scored, spec.model_ids, profiles)
    }

    #[test]
    fn cascade_beats_giant_only_energy_when_small_absorbs_traffic() {
        let (scored, models, profiles) = two_model_setup();
        let map = ProfileMap::from_coeffs(&profiles, 16.0);
        let cl = cluster(2);
        let workload = Workload {
            arrivals: ArrivalProcess::Poisson { rate: 40.0 },
            duration: 30.0,
            seed: 21,
        };
        let config = SimConfig::default();

        let cascade = CascadeConfig {
            models: models.clone(),
            thresholds: vec![0.5, 0.0],
            skip_bands: vec![Vec::new(), Vec::new()],
        };
        let plan = manual_plan(&models, &[1, 1], 2);
        let cascade_report = run(
            &plan, &cascade, &scored, &map, &profiles, &cl, &workload, &config,
        )
        .unwrap();

        let giant_only = CascadeConfig {
            models: vec![models[1].clone()],
            thresholds: vec![0.0],
            skip_bands: vec![Vec::new()],
        };
        let giant_plan = manual_plan(&models[1..], &[2], 2);
        let giant_report = run(
            &giant_plan, &giant_only, &scored, &map, &profiles, &cl, &workload, &config,
        )
        .unwrap();

        let c = cascade_report.joules_per_request.unwrap();
        let g = giant_report.joules_per_request.unwrap();
        assert!(
            cascade_report.reach_fraction[1] < 1.0,
            "some requests must stop at the small model"
        );
        assert!(c < g, "cascade {c} J/req vs giant-only {g} J/req");
        // Light load: the cascade tail pays the extra hop.
        assert!(
            cascade_report.p999_latency.unwrap() >= giant_report.p999_latency.unwrap(),
            "escalated requests traverse predecessors"
        );
    }

    #[test]
    fn identical_runs_are_byte_identical_and_ratios_are_one() {
        let (scored, models, profiles) = two_model_setup();
        let map = ProfileMap::from_coeffs(&profiles, 16.0);
        let cl = cluster(2);
        let workload = Workload {
            arrivals: ArrivalProcess::Poisson { rate: 20.0 },
            duration: 5.0,
            seed: 9,
        };
        let cascade = CascadeConfig {
            models: models.clone(),
            thresholds: vec![0.5, 0.0],
            skip_bands: vec![Vec::new(), Vec::new()],
        };
        let plan = manual_plan(&models, &[1, 1], 2);
        let config = SimConfig::default();
        let a = run(
            &plan, &cascade, &scored, &map, &profiles, &cl, &workload, &config,
        )
        .unwrap();
        let b = run(
            &plan, &cascade, &scored, &map, &profiles, &cl, &workload, &config,
        )
        .unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        let table = crate::sim::compare_plans(&[("a".into(), &a), ("b".into(), &b)]).unwrap();
        for row in &table.rows {
            for r in row.ratios.iter().flatten() {
                assert!((r - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unplaced_cascade_model_is_rejected() {
        let (scored, models, profiles) = two_model_setup();
        let map = ProfileMap::from_coeffs(&profiles, 16.0);
        let cl = cluster(2);
        let cascade = CascadeConfig {
            models: models.clone(),
            thresholds: vec![0.5, 0.0],
            skip_bands: vec![Vec::new(), Vec::new()],
        };
        // Plan only covers the giant.
        let plan = manual_plan(&models[1..], &[1], 2);
        let workload = Workload {
            arrivals: ArrivalProcess::Poisson { rate: 10.0 },
            duration: 1.0,
            seed: 1,
        };
        let err = run(
            &plan,
            &cascade,
            &scored,
            &map,
            &profiles,
            &cl,
            &workload,
            &SimConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    #[test]
    fn partition_chain_traverses_both_gpus() {
        let (scored, cascade, profiles) = single_model_setup();
        // Two partitions of one replica on two GPUs.
        let mut plan = manual_plan(&cascade.models, &[1], 2);
        plan.partitions = vec![2];
        plan.placements = vec![
            PlacedNode {
                node: PlacementNode {
                    node_id: 0,
                    model: cascade.models[0].clone(),
                    replica: 0,
                    partition: 0,
                    memory_demand: 5e8,
                    utilization_demand: 0.5,
                },
                gpu: 0,
                gpu_id: "g0".into(),
            },
            PlacedNode {
                node: PlacementNode {
                    node_id: 1,
                    model: cascade.models[0].clone(),
                    replica: 0,
                    partition: 1,
                    memory_demand: 5e8,
                    utilization_demand: 0.5,
                },
                gpu: 1,
                gpu_id: "g1".into(),
            },
        ];
        let map = ProfileMap::from_coeffs(&profiles, 16.0);
        let cl = cluster(2);
        let workload = Workload {
            arrivals: ArrivalProcess::Poisson { rate: 10.0 },
            duration: 10.0,
            seed: 2,
        };
        let report = run(
            &plan,
            &cascade,
            &scored,
            &map,
            &profiles,
            &cl,
            &workload,
            &SimConfig::default(),
        )
        .unwrap();
        assert!(report.completed > 0);
        assert!(report.per_gpu_busy_fraction[0] > 0.0);
        assert!(report.per_gpu_busy_fraction[1] > 0.0);
    }
}
