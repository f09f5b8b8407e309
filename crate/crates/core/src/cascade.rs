//! Cascade routing and evaluation.
//!
//! A [`CascadeConfig`] orders a subset of the family small to large and
//! attaches a confidence threshold to every model (the last is forced to
//! 0 so it always answers). A request walks the chain: a model answers
//! when its score clears the threshold, otherwise the request moves to
//! the next model — or, when skip bands are configured, jumps directly to
//! the band's destination. [`evaluate`] aggregates routing over a trace
//! into accuracy, per-model handled/reach fractions, expected energy, and
//! expected latency.

use serde::{Deserialize, Serialize};

use crate::calibration::{score_output, CalibrationTable};
use crate::error::{Error, Result};
use crate::trace::{ModelId, ModelProfile, PredictionRecord, TraceBundle};

/// One skip band: scores in `[lower, previous bound)` jump to `dest`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipBand {
    pub lower: f64,
    /// Destination index within the cascade's model list.
    pub dest: usize,
}

/// An ordered cascade with thresholds and optional skip bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    /// Participating models, small to large.
    pub models: Vec<ModelId>,
    /// One threshold per model; the last entry is always 0.
    pub thresholds: Vec<f64>,
    /// Per-model bands partitioning `[0, t_i)`, empty for sequential routing.
    pub skip_bands: Vec<Vec<SkipBand>>,
}

impl CascadeConfig {
    /// Sequential cascade from the free thresholds of models `1..n-1`;
    /// the final threshold is forced to 0.
    pub fn sequential(models: Vec<ModelId>, free_thresholds: &[f64]) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Invariant("cascade needs >= 1 model".into()));
        }
        if free_thresholds.len() + 1 != models.len() {
            return Err(Error::Shape(format!(
                "{} thresholds for {} models",
                free_thresholds.len(),
                models.len()
            )));
        }
        let mut thresholds = free_thresholds.to_vec();
        thresholds.push(0.0);
        let skip_bands = vec![Vec::new(); models.len()];
        let config = CascadeConfig {
            models,
            thresholds,
            skip_bands,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.models.len();
        if n == 0 {
            return Err(Error::Invariant("cascade needs >= 1 model".into()));
        }
        if self.thresholds.len() != n || self.skip_bands.len() != n {
            return Err(Error::Shape(
                "thresholds and skip_bands must match model count".into(),
            ));
        }
        if self.thresholds[n - 1] != 0.0 {
            return Err(Error::Invariant(
                "last model's threshold must be 0 so it always answers".into(),
            ));
        }
        for (i, t) in self.thresholds.iter().enumerate() {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::Invariant(format!(
                    "threshold {t} at position {i} outside [0,1]"
                )));
            }
        }
        for (i, bands) in self.skip_bands.iter().enumerate() {
            if bands.is_empty() {
                continue;
            }
            let t = self.thresholds[i];
            if t <= 0.0 {
                return Err(Error::Invariant(format!(
                    "model {i} has skip bands but threshold 0"
                )));
            }
            let mut prev_bound = t;
            let mut prev_dest = i;
            for band in bands {
                if band.lower >= prev_bound {
                    return Err(Error::Invariant(format!(
                        "model {i}: band bounds must strictly decrease below {t}"
                    )));
                }
                if band.dest <= prev_dest || band.dest >= n {
                    return Err(Error::Invariant(format!(
                        "model {i}: band destinations must strictly increase and stay in range"
                    )));
                }
                prev_bound = band.lower;
                prev_dest = band.dest;
            }
            if bands.last().expect("nonempty").lower != 0.0 {
                return Err(Error::Invariant(format!(
                    "model {i}: bands must cover down to 0"
                )));
            }
        }
        Ok(())
    }

    /// Where a below-threshold score at model `i` routes next.
    fn next_hop(&self, i: usize, score: f64) -> usize {
        for band in &self.skip_bands[i] {
            if score >= band.lower {
                return band.dest;
            }
        }
        i + 1
    }
}

/// Per-request routing result.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteOutcome {
    /// Index (within the cascade) of the answering model.
    pub answered: usize,
    pub correct: bool,
    /// Visited model indices in order, ending with `answered`.
    pub path: Vec<usize>,
}

/// Route one raw record through the cascade.
pub fn route_request(
    record: &PredictionRecord,
    config: &CascadeConfig,
    calib: &CalibrationTable,
) -> Result<RouteOutcome> {
    config.validate()?;
    let mut path = Vec::new();
    let mut i = 0;
    loop {
        path.push(i);
        let model = &config.models[i];
        let output = record.outputs.get(model).ok_or_else(|| {
            Error::MissingModel(format!(
                "record {} lacks output for visited model {model}",
                record.request_id
            ))
        })?;
        if i == config.len() - 1 {
            return Ok(RouteOutcome {
                answered: i,
                correct: output.matches(&record.label),
                path,
            });
        }
        let score = score_output(output, calib.task, calib.temperature(model)?)?.value();
        if score >= config.thresholds[i] {
            return Ok(RouteOutcome {
                answered: i,
                correct: output.matches(&record.label),
                path,
            });
        }
        i = config.next_hop(i, score);
    }
}

/// Confidence scores and correctness precomputed once per trace, so
/// repeated evaluations at different thresholds stay cheap.
#[derive(Debug, Clone)]
pub struct ScoredTrace {
    pub models: Vec<ModelId>,
    /// `scores[record][model]` in trace model order.
    pub scores: Vec<Vec<f64>>,
    /// `correct[record][model]` in trace model order.
    pub correct: Vec<Vec<bool>>,
}

impl ScoredTrace {
    pub fn new(trace: &TraceBundle, calib: &CalibrationTable) -> Result<Self> {
        let temps: Vec<_> = trace
            .models
            .iter()
            .map(|m| calib.temperature(m))
            .collect::<Result<_>>()?;
        let mut scores = Vec::with_capacity(trace.records.len());
        let mut correct = Vec::with_capacity(trace.records.len());
        for rec in &trace.records {
            let mut srow = Vec::with_capacity(trace.models.len());
            let mut crow = Vec::with_capacity(trace.models.len());
            for (m, temp) in trace.models.iter().zip(&temps) {
                let out = rec.outputs.get(m).ok_or_else(|| {
                    Error::MissingModel(format!("record {} lacks output for {m}", rec.request_id))
                })?;
                srow.push(score_output(out, trace.task, *temp)?.value());
                crow.push(out.matches(&rec.label));
            }
            scores.push(srow);
            correct.push(crow);
        }
        Ok(ScoredTrace {
            models: trace.models.clone(),
            scores,
            correct,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Standalone accuracy of one model column.
    pub fn standalone_accuracy(&self, col: usize) -> f64 {
        if self.correct.is_empty() {
            return 0.0;
        }
        self.correct.iter().filter(|row| row[col]).count() as f64 / self.correct.len() as f64
    }

    fn columns_for(&self, models: &[ModelId]) -> Result<Vec<usize>> {
        models
            .iter()
            .map(|m| {
                self.models
                    .iter()
                    .position(|x| x == m)
                    .ok_or_else(|| Error::MissingModel(format!("{m} not in scored trace")))
            })
            .collect()
    }
}

/// Per-request costs of the cascade's models.
#[derive(Debug, Clone)]
pub struct CascadeCosts {
    /// Joules per request for each cascade model.
    pub energy: Vec<f64>,
    /// Service seconds for each cascade model.
    pub latency: Vec<f64>,
    /// Router seconds added per visited model.
    pub hop_overhead: f64,
}

/// Default per-hop router overhead in seconds.
pub const DEFAULT_HOP_OVERHEAD: f64 = 1e-3;

impl CascadeCosts {
    pub fn from_profiles(
        models: &[ModelId],
        profiles: &[ModelProfile],
        hop_overhead: f64,
    ) -> Result<Self> {
        let mut energy = Vec::with_capacity(models.len());
        let mut latency = Vec::with_capacity(models.len());
        for m in models {
            let p = profiles
                .iter()
                .find(|p| &p.model_id == m)
                .ok_or_else(|| Error::MissingModel(format!("no profile for {m}")))?;
            energy.push(p.energy_per_request);
            latency.push(p.service_latency);
        }
        Ok(CascadeCosts {
            energy,
            latency,
            hop_overhead,
        })
    }
}

/// Traffic fraction on one routing edge of the cascade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardEdge {
    pub from: usize,
    pub to: usize,
    pub fraction: f64,
}

/// Aggregated routing metrics over a trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeMetrics {
    pub accuracy: f64,
    /// Fraction of requests answered at each model; sums to 1.
    pub handled_fraction: Vec<f64>,
    /// Fraction of requests that execute on each model.
    pub reach_fraction: Vec<f64>,
    /// Fractions forwarded along each routing edge.
    pub forward_edges: Vec<ForwardEdge>,
    /// Expected joules per request: sum of reach fraction times energy.
    pub energy_per_request: f64,
    /// Expected seconds per request including router overhead per hop.
    pub expected_latency: f64,
}

/// Evaluate a cascade configuration over a full trace.
pub fn evaluate(
    trace: &TraceBundle,
    config: &CascadeConfig,
    calib: &CalibrationTable,
    costs: &CascadeCosts,
) -> Result<CascadeMetrics> {
    let scored = ScoredTrace::new(trace, calib)?;
    evaluate_scored(&scored, config, costs)
}

/// Evaluate against precomputed scores.
pub fn evaluate_scored(
    scored: &ScoredTrace,
    config: &CascadeConfig,
    costs: &CascadeCosts,
) -> Result<CascadeMetrics> {
    config.validate()?;
    if scored.is_empty() {
        return Err(Error::EmptyInput("cannot evaluate an empty trace".into()));
    }
    if costs.energy.len() != config.len() || costs.latency.len() != config.len() {
        return Err(Error::Shape("costs must match cascade length".into()));
    }
    let cols = scored.columns_for(&config.models)?;
    let n = config.len();
    let total = scored.len() as f64;

    let mut handled = vec![0usize; n];
    let mut reach = vec![0usize; n];
    let mut edges = std::collections::BTreeMap::<(usize, usize), usize>::new();
    let mut correct_count = 0usize;
    let mut latency_sum = 0.0;
    let mut oracle_count = 0usize;

    for r in 0..scored.len() {
        let mut i = 0;
        let mut lat = 0.0;
        loop {
            reach[i] += 1;
            lat += costs.latency[i] + costs.hop_overhead;
            let score = scored.scores[r][cols[i]];
            let answers = i == n - 1 || score >= config.thresholds[i];
            if answers {
                handled[i] += 1;
                if scored.correct[r][cols[i]] {
                    correct_count += 1;
                }
                break;
            }
            let next = config.next_hop(i, score);
            *edges.entry((i, next)).or_insert(0) += 1;
            i = next;
        }
        latency_sum += lat;
        if cols.iter().any(|&c| scored.correct[r][c]) {
            oracle_count += 1;
        }
    }

    let handled_fraction: Vec<f64> = handled.iter().map(|&h| h as f64 / total).collect();
    let reach_fraction: Vec<f64> = reach.iter().map(|&h| h as f64 / total).collect();
    let energy_per_request: f64 = reach_fraction
        .iter()
        .zip(&costs.energy)
        .map(|(r, e)| r * e)
        .sum();
    let accuracy = correct_count as f64 / total;

    // Routing can never beat answering every request with its best model.
    let oracle = oracle_count as f64 / total;
    debug_assert!(accuracy <= oracle + 1e-12);

    Ok(CascadeMetrics {
        accuracy,
        handled_fraction,
        reach_fraction,
        forward_edges: edges
            .into_iter()
            .map(|((from, to), c)| ForwardEdge {
                from,
                to,
                fraction: c as f64 / total,
            })
            .collect(),
        energy_per_request,
        expected_latency: latency_sum / total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::calibrate_family;
    use crate::trace::{generate_synthetic_trace, JointAccuracySpec, RawOutput, TaskKind};

    fn family() -> (TraceBundle, CalibrationTable, CascadeCosts) {
        let spec = JointAccuracySpec {
            task: TaskKind::Classification,
            class_count: 4,
            gen_steps: 1,
            model_ids: vec![ModelId::new("m1"), ModelId::new("m2"), ModelId::new("m3")],
            marginals: vec![0.65, 0.78, 0.88],
            contributions: vec![0.65, 0.16, 0.07],
            overlap: 0.2,
        };
        let trace = generate_synthetic_trace(&spec, 200, 17).unwrap();
        let calib = calibrate_family(&trace).unwrap();
        let costs = CascadeCosts {
            energy: vec![1.0, 4.0, 16.0],
            latency: vec![0.004, 0.012, 0.05],
            hop_overhead: 1e-3,
        };
        (trace, calib, costs)
    }

    fn two_model() -> (TraceBundle, CalibrationTable, CascadeCosts) {
        let spec = JointAccuracySpec {
            task: TaskKind::Classification,
            class_count: 4,
            gen_steps: 1,
            model_ids: vec![ModelId::new("m1"), ModelId::new("m2")],
            marginals: vec![0.6, 0.85],
            contributions: vec![0.6, 0.25],
            overlap: 0.2,
        };
        let trace = generate_synthetic_trace(&spec, 200, 23).unwrap();
        let calib = calibrate_family(&trace).unwrap();
        let costs = CascadeCosts {
            energy: vec![1.0, 10.0],
            latency: vec![0.004, 0.05],
            hop_overhead: 1e-3,
        };
        (trace, calib, costs)
    }

    #[test]
    fn zero_thresholds_answer_at_first_model() {
        let (trace, calib, _) = family();
        let config =
            CascadeConfig::sequential(trace.models.clone(), &[0.0, 0.0]).unwrap();
        for rec in &trace.records {
            let out = route_request(rec, &config, &calib).unwrap();
            assert_eq!(out.answered, 0);
            assert_eq!(out.path, vec![0]);
        }
    }

    #[test]
    fn threshold_one_never_answers_locally() {
        let (trace, calib, _) = family();
        let config =
            CascadeConfig::sequential(trace.models.clone(), &[1.0, 0.0]).unwrap();
        for rec in &trace.records {
            let out = route_request(rec, &config, &calib).unwrap();
            assert!(out.answered >= 1, "non-degenerate scores stay below 1");
        }
    }

    #[test]
    fn low_confidence_skips_to_largest() {
        let (trace, calib, _) = family();
        // Spread the softmax so the score lands near 0.2, inside the
        // bottom band [0, 0.35) which jumps straight to the last model.
        let p: f64 = 0.2f64.sqrt();
        let rest: f64 = (1.0 - p) / 3.0;
        let logits: Vec<f64> = vec![p.ln(), rest.ln(), rest.ln(), rest.ln()];
        let mut rec = trace.records[0].clone();
        // Unit temperature keeps the crafted softmax exact.
        let mut calib = calib;
        for entry in calib.entries.values_mut() {
            entry.temperature = 1.0;
        }
        rec.outputs
            .insert(ModelId::new("m1"), RawOutput::Logits { logits });
        let config = CascadeConfig {
            models: trace.models.clone(),
            thresholds: vec![0.7, 0.0, 0.0],
            skip_bands: vec![
                vec![
                    SkipBand {
                        lower: 0.35,
                        dest: 1,
                    },
                    SkipBand { lower: 0.0, dest: 2 },
                ],
                Vec::new(),
                Vec::new(),
            ],
        };
        let out = route_request(&rec, &config, &calib).unwrap();
        assert_eq!(out.path, vec![0, 2]);
    }

    #[test]
    fn two_model_corner_configs() {
        let (trace, calib, costs) = two_model();
        let zero = CascadeConfig::sequential(trace.models.clone(), &[0.0]).unwrap();
        let m = evaluate(&trace, &zero, &calib, &costs).unwrap();
        assert!((m.accuracy - trace.standalone_accuracy(&trace.models[0])).abs() < 1e-12);
        assert!((m.energy_per_request - 1.0).abs() < 1e-12);

        let full = CascadeConfig::sequential(trace.models.clone(), &[1.0]).unwrap();
        let m = evaluate(&trace, &full, &calib, &costs).unwrap();
        assert!((m.accuracy - trace.standalone_accuracy(&trace.models[1])).abs() < 1e-12);
        assert!((m.energy_per_request - 11.0).abs() < 1e-12);
    }

    /// Brute-force replay oracle: walk every record independently of the
    /// evaluate implementation and aggregate by hand.
    fn replay_oracle(
        trace: &TraceBundle,
        config: &CascadeConfig,
        calib: &CalibrationTable,
        costs: &CascadeCosts,
    ) -> (f64, Vec<f64>, f64) {
        let n = config.len();
        let mut reach = vec![0.0; n];
        let mut correct = 0.0;
        for rec in &trace.records {
            let mut i = 0;
            loop {
                reach[i] += 1.0;
                let model = &config.models[i];
                let score = score_output(
                    &rec.outputs[model],
                    calib.task,
                    calib.temperature(model).unwrap(),
                )
                .unwrap()
                .value();
                if i == n - 1 || score >= config.thresholds[i] {
                    if rec.outputs[model].matches(&rec.label) {
                        correct += 1.0;
                    }
                    break;
                }
                let mut next = i + 1;
                for band in &config.skip_bands[i] {
                    if score >= band.lower {
                        next = band.dest;
                        break;
                    }
                }
                i = next;
            }
        }
        let total = trace.len() as f64;
        let energy: f64 = reach
            .iter()
            .zip(&costs.energy)
            .map(|(r, e)| r / total * e)
            .sum();
        (correct / total, reach.iter().map(|r| r / total).collect(), energy)
    }

    #[test]
    fn evaluate_matches_replay_oracle() {
        let (trace, calib, costs) = two_model();
        let config = CascadeConfig::sequential(trace.models.clone(), &[0.6]).unwrap();
        let metrics = evaluate(&trace, &config, &calib, &costs).unwrap();
        let (acc, reach, energy) = replay_oracle(&trace, &config, &calib, &costs);
        assert_eq!(metrics.accuracy, acc);
        assert_eq!(metrics.reach_fraction, reach);
        assert!((metrics.energy_per_request - energy).abs() < 1e-12);
    }

    #[test]
    fn handled_fractions_conserve() {
        let (trace, calib, costs) = family();
        for t in [[0.3, 0.5], [0.9, 0.2], [0.0, 0.99]] {
            let config = CascadeConfig::sequential(trace.models.clone(), &t).unwrap();
            let m = evaluate(&trace, &config, &calib, &costs).unwrap();
            let sum: f64 = m.handled_fraction.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert_eq!(m.reach_fraction[0], 1.0);
            // No skips: reach is nonincreasing.
            for w in m.reach_fraction.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn raising_threshold_weakly_increases_downstream_reach_and_energy() {
        let (trace, calib, costs) = family();
        let scored = ScoredTrace::new(&trace, &calib).unwrap();
        let mut prev = None;
        for step in 0..=10 {
            let t1 = step as f64 / 10.0;
            let config = CascadeConfig::sequential(trace.models.clone(), &[t1, 0.5]).unwrap();
            let m = evaluate_scored(&scored, &config, &costs).unwrap();
            if let Some((reach2, reach3, energy)) = prev {
                assert!(m.reach_fraction[1] + 1e-12 >= reach2);
                assert!(m.reach_fraction[2] + 1e-12 >= reach3);
                assert!(m.energy_per_request + 1e-12 >= energy);
            }
            prev = Some((m.reach_fraction[1], m.reach_fraction[2], m.energy_per_request));
        }
    }

    #[test]
    fn accuracy_bounded_by_joint_oracle() {
        let (trace, calib, costs) = family();
        let oracle = trace.joint_oracle_accuracy();
        for t in [[0.2, 0.2], [0.5, 0.5], [0.8, 0.8]] {
            let config = CascadeConfig::sequential(trace.models.clone(), &t).unwrap();
            let m = evaluate(&trace, &config, &calib, &costs).unwrap();
            assert!(m.accuracy <= oracle + 1e-12);
        }
    }

    #[test]
    fn skips_never_route_to_smaller_models() {
        let (trace, calib, _) = family();
        let sequential = CascadeConfig::sequential(trace.models.clone(), &[0.7, 0.6]).unwrap();
        let skipping = CascadeConfig {
            models: trace.models.clone(),
            thresholds: vec![0.7, 0.6, 0.0],
            skip_bands: vec![
                vec![
                    SkipBand {
                        lower: 0.07,
                        dest: 1,
                    },
                    SkipBand { lower: 0.0, dest: 2 },
                ],
                vec![SkipBand { lower: 0.0, dest: 2 }],
                Vec::new(),
            ],
        };
        for rec in &trace.records {
            let a = route_request(rec, &sequential, &calib).unwrap();
            let b = route_request(rec, &skipping, &calib).unwrap();
            assert!(b.answered >= a.answered, "skips only jump forward");
        }
    }

    #[test]
    fn empty_trace_rejected() {
        let (trace, calib, costs) = two_model();
        let empty = TraceBundle::new(trace.task, trace.models.clone(), Vec::new());
        let config = CascadeConfig::sequential(trace.models.clone(), &[0.5]).unwrap();
        assert!(matches!(
            evaluate(&empty, &config, &calib, &costs),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn band_validation_rejects_nondecreasing_bounds() {
        let models = vec![ModelId::new("a"), ModelId::new("b"), ModelId::new("c")];
        let config = CascadeConfig {
            models,
            thresholds: vec![0.5, 0.2, 0.0],
            skip_bands: vec![
                vec![
                    SkipBand { lower: 0.1, dest: 1 },
                    SkipBand { lower: 0.3, dest: 2 },
                ],
                Vec::new(),
                Vec::new(),
            ],
        };
        assert!(config.validate().is_err());
    }
}
