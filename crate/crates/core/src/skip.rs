//! Stage pruning and skip-band assignment.
//!
//! A cascade stage earns its place when the energy it saves downstream
//! exceeds the energy it burns itself: `(reach_i - reach_{i+1}) * e_{i+1}
//! - reach_i * e_i`. Stages with non-positive benefit are removed smallest
//! first; after every removal the thresholds are re-searched so accuracy
//! holds. Once the retained set is stable, each stage's below-threshold
//! interval is partitioned into deterministic log-spaced bands, one per
//! retained successor, so very low confidence jumps straight to large
//! models.

use serde::{Deserialize, Serialize};

use crate::cascade::{evaluate_scored, CascadeConfig, CascadeCosts, ScoredTrace, SkipBand};
use crate::error::{Error, Result};
use crate::threshold::{search_scored, select_ap, select_eo, PerfGraph, SearchParams};
use crate::trace::{ModelId, ModelProfile, SCHEMA_VERSION};

/// Which operating point drives threshold selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatingMode {
    /// Match the largest model's accuracy at minimum energy.
    AccuracyPreserving,
    /// Maximum-curvature frontier point above the second-largest
    /// model's accuracy.
    EnergyOptimizing,
}

/// Deployment configuration produced by pruning and band assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkipPlan {
    pub schema_version: u32,
    pub mode: OperatingMode,
    /// Retained models, small to large; the largest is always kept.
    pub retained: Vec<ModelId>,
    /// Final thresholds, one per retained model, last always 0.
    pub thresholds: Vec<f64>,
    /// Bands partitioning `[0, t_i)` per retained model.
    pub skip_bands: Vec<Vec<SkipBand>>,
    /// Energy benefit of each retained non-final model at the final
    /// thresholds; all strictly positive on termination.
    pub energy_benefits: Vec<f64>,
    /// Models removed, in removal order.
    pub removed: Vec<ModelId>,
    /// Validation accuracy at the final (no-skip) thresholds.
    pub accuracy: f64,
    /// Expected joules per request at the final (no-skip) thresholds.
    pub energy_per_request: f64,
    /// Accuracy the selection had to hold (AP target or EO floor).
    pub accuracy_requirement: f64,
}

impl SkipPlan {
    /// The routed cascade with bands attached.
    pub fn to_config(&self) -> Result<CascadeConfig> {
        let config = CascadeConfig {
            models: self.retained.clone(),
            thresholds: self.thresholds.clone(),
            skip_bands: self.skip_bands.clone(),
        };
        config.validate()?;
        Ok(config)
    }

    /// The same cascade with sequential routing only.
    pub fn to_sequential_config(&self) -> Result<CascadeConfig> {
        let config = CascadeConfig {
            models: self.retained.clone(),
            thresholds: self.thresholds.clone(),
            skip_bands: vec![Vec::new(); self.retained.len()],
        };
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, crate::trace::to_json_bytes(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let plan: SkipPlan = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        plan.to_config()?;
        Ok(plan)
    }
}

/// Per-request joules model `i` saves downstream minus what it spends:
/// `(reach_i - reach_{i+1}) * e_{i+1} - reach_i * e_i`.
pub fn energy_benefit(i: usize, reach: &[f64], energy: &[f64]) -> Result<f64> {
    if reach.len() != energy.len() {
        return Err(Error::Shape("reach and energy lengths differ".into()));
    }
    if i + 1 >= reach.len() {
        return Err(Error::Invariant(format!(
            "model {i} has no successor; energy benefit undefined"
        )));
    }
    Ok((reach[i] - reach[i + 1]) * energy[i + 1] - reach[i] * energy[i])
}

/// Log-spaced skip bands below each threshold: model `i` with `s`
/// retained successors gets boundaries `t_i * 10^-j` for `j = 1..s-1`;
/// the band nearest the threshold routes to the immediate successor and
/// the band touching zero routes to the largest model.
pub fn assign_skip_bands(thresholds: &[f64]) -> Vec<Vec<SkipBand>> {
    let n = thresholds.len();
    let mut all = vec![Vec::new(); n];
    for (i, bands) in all.iter_mut().enumerate().take(n.saturating_sub(1)) {
        let t = thresholds[i];
        if t <= 0.0 {
            continue;
        }
        let successors = n - 1 - i;
        for j in 1..=successors {
            let lower = if j == successors {
                0.0
            } else {
                t * 10f64.powi(-(j as i32))
            };
            bands.push(SkipBand { lower, dest: i + j });
        }
    }
    all
}

/// Outcome of one prune round, kept for inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneRound {
    pub retained: Vec<ModelId>,
    pub thresholds: Vec<f64>,
    pub benefits: Vec<f64>,
    pub removed: Option<ModelId>,
}

/// Run the prune/re-search loop and assign skip bands.
///
/// Threshold searches inside the loop run with `params.seed + round` so
/// the whole procedure is a pure function of its inputs.
pub fn prune_and_rewire(
    scored: &ScoredTrace,
    models: &[ModelId],
    profiles: &[ModelProfile],
    hop_overhead: f64,
    params: &SearchParams,
    mode: OperatingMode,
) -> Result<SkipPlan> {
    if models.len() < 2 {
        return Err(Error::Invariant("pruning needs >= 2 models".into()));
    }
    // Requirements are fixed before any removal: the largest model's
    // standalone accuracy (AP) or the second-largest's (EO). Re-searches
    // after removals must still meet the pre-prune bar.
    let col = |m: &ModelId| -> Result<usize> {
        scored
            .models
            .iter()
            .position(|x| x == m)
            .ok_or_else(|| Error::MissingModel(format!("{m} not in scored trace")))
    };
    let pre_target = scored.standalone_accuracy(col(&models[models.len() - 1])?);
    let pre_floor = scored.standalone_accuracy(col(&models[models.len() - 2])?);

    let mut retained: Vec<ModelId> = models.to_vec();
    let mut removed: Vec<ModelId> = Vec::new();
    let mut round = 0u64;
    loop {
        let costs = CascadeCosts::from_profiles(&retained, profiles, hop_overhead)?;
        if retained.len() == 1 {
            // Only the largest model left; it answers everything.
            let config = CascadeConfig::sequential(retained.clone(), &[])?;
            let metrics = evaluate_scored(scored, &config, &costs)?;
            return Ok(SkipPlan {
                schema_version: SCHEMA_VERSION,
                mode,
                retained,
                thresholds: vec![0.0],
                skip_bands: vec![Vec::new()],
                energy_benefits: Vec::new(),
                removed,
                accuracy: metrics.accuracy,
                energy_per_request: metrics.energy_per_request,
                accuracy_requirement: match mode {
                    OperatingMode::AccuracyPreserving => pre_target,
                    OperatingMode::EnergyOptimizing => pre_floor,
                },
            });
        }

        let round_params = SearchParams {
            seed: params.seed.wrapping_add(round),
            ..params.clone()
        };
        let graph = search_scored(scored, &retained, &costs, &round_params)?;
        let selected = select_mode(&graph, mode, pre_target, pre_floor)?;
        let config = CascadeConfig::sequential(retained.clone(), &selected)?;
        let metrics = evaluate_scored(scored, &config, &costs)?;
        let benefits: Vec<f64> = (0..retained.len() - 1)
            .map(|i| energy_benefit(i, &metrics.reach_fraction, &costs.energy))
            .collect::<Result<_>>()?;

        if let Some(victim) = benefits.iter().position(|&b| b <= 0.0) {
            removed.push(retained.remove(victim));
            round += 1;
            continue;
        }

        let mut thresholds = selected.clone();
        thresholds.push(0.0);
        let skip_bands = assign_skip_bands(&thresholds);
        let plan = SkipPlan {
            schema_version: SCHEMA_VERSION,
            mode,
            retained,
            thresholds,
            skip_bands,
            energy_benefits: benefits,
            removed,
            accuracy: metrics.accuracy,
            energy_per_request: metrics.energy_per_request,
            accuracy_requirement: match mode {
                OperatingMode::AccuracyPreserving => pre_target,
                OperatingMode::EnergyOptimizing => pre_floor,
            },
        };
        plan.to_config()?;
        return Ok(plan);
    }
}

fn select_mode(
    graph: &PerfGraph,
    mode: OperatingMode,
    pre_target: f64,
    pre_floor: f64,
) -> Result<Vec<f64>> {
    let selected = match mode {
        OperatingMode::AccuracyPreserving => select_ap(graph, pre_target)?,
        OperatingMode::EnergyOptimizing => {
            // The floor never relaxes below its pre-prune value even if
            // pruning changed which model is second largest.
            select_eo(graph, pre_floor.max(graph.accuracy_floor))?
        }
    };
    Ok(selected.point.thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::calibrate_family;
    use crate::trace::{
        generate_synthetic_trace, AffineCoeffs, JointAccuracySpec, TaskKind, TraceBundle,
    };

    fn profile(id: &str, params: u64, energy: f64) -> ModelProfile {
        ModelProfile {
            model_id: ModelId::new(id),
            param_count: params,
            standalone_accuracy: 0.8,
            energy_per_request: energy,
            service_latency: 0.01 * (params as f64 / 100.0),
            memory_bytes: params as f64 * 4e6,
            utilization_coeffs: AffineCoeffs {
                slope: 0.01,
                intercept: 0.05,
            },
            transmission_coeffs: AffineCoeffs {
                slope: 1e-4,
                intercept: 1e-3,
            },
            output_bytes: 1e3,
            memory_slope: 0.0,
            latency_slope: 0.0,
        }
    }

    fn build(spec: &JointAccuracySpec, n: usize, seed: u64) -> (TraceBundle, ScoredTrace) {
        let trace = generate_synthetic_trace(spec, n, seed).unwrap();
        let calib = calibrate_family(&trace).unwrap();
        let scored = ScoredTrace::new(&trace, &calib).unwrap();
        (trace, scored)
    }

    #[test]
    fn benefit_direct_substitution() {
        let b = energy_benefit(0, &[0.5, 0.1], &[1.0, 10.0]).unwrap();
        assert!((b - 3.5).abs() < 1e-12);
    }

    #[test]
    fn benefit_of_model_that_answers_nothing() {
        let b = energy_benefit(0, &[0.4, 0.4], &[2.0, 10.0]).unwrap();
        assert!((b + 0.8).abs() < 1e-12);
        assert!(b <= 0.0);
    }

    #[test]
    fn benefit_of_unreached_model_is_zero() {
        let b = energy_benefit(1, &[1.0, 0.0, 0.0], &[1.0, 5.0, 10.0]).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn benefit_of_last_model_is_undefined() {
        assert!(energy_benefit(1, &[1.0, 0.5], &[1.0, 10.0]).is_err());
    }

    #[test]
    fn band_boundaries_are_log_spaced() {
        let bands = assign_skip_bands(&[0.7, 0.5, 0.0]);
        assert_eq!(bands[0].len(), 2);
        assert!((bands[0][0].lower - 0.07).abs() < 1e-12);
        assert_eq!(bands[0][0].dest, 1);
        assert_eq!(bands[0][1], SkipBand { lower: 0.0, dest: 2 });
        assert_eq!(bands[1], vec![SkipBand { lower: 0.0, dest: 2 }]);
        assert!(bands[2].is_empty());
    }

    #[test]
    fn bands_partition_without_gaps() {
        let thresholds = [0.9, 0.42, 0.13, 0.0];
        let bands = assign_skip_bands(&thresholds);
        for (i, t) in thresholds.iter().enumerate() {
            if *t <= 0.0 {
                assert!(bands[i].is_empty());
                continue;
            }
            let mut upper = *t;
            for band in &bands[i] {
                assert!(band.lower < upper, "bounds strictly decrease");
                upper = band.lower;
            }
            assert_eq!(upper, 0.0, "last band reaches zero");
            // Destinations strictly increase toward the largest model.
            let dests: Vec<usize> = bands[i].iter().map(|b| b.dest).collect();
            for w in dests.windows(2) {
                assert!(w[1] > w[0]);
            }
            assert_eq!(*dests.last().unwrap(), thresholds.len() - 1);
        }
    }

    #[test]
    fn zero_threshold_gets_no_bands() {
        let bands = assign_skip_bands(&[0.0, 0.0]);
        assert!(bands[0].is_empty());
        assert!(bands[1].is_empty());
    }

    #[test]
    fn band_lookup_matches_fig_narrative() {
        // c = 0.2 under t = 0.7 with boundary 0.07 routes to the next
        // model; c = 0.05 skips to the largest.
        let bands = assign_skip_bands(&[0.7, 0.3, 0.0]);
        let hop = |c: f64| bands[0].iter().find(|b| c >= b.lower).unwrap().dest;
        assert_eq!(hop(0.2), 1);
        assert_eq!(hop(0.05), 2);
    }

    fn search_params(seed: u64) -> SearchParams {
        SearchParams {
            samples_per_round: 48,
            max_rounds: 8,
            seed,
            ..SearchParams::default()
        }
    }

    #[test]
    fn two_model_family_with_positive_benefit_keeps_both() {
        let spec = JointAccuracySpec {
            task: TaskKind::Classification,
            class_count: 4,
            gen_steps: 1,
            model_ids: vec![ModelId::new("m1"), ModelId::new("m2")],
            marginals: vec![0.7, 0.85],
            contributions: vec![0.7, 0.2],
            overlap: 0.15,
        };
        let (_, scored) = build(&spec, 400, 21);
        let profiles = vec![profile("m1", 60, 1.0), profile("m2", 3000, 30.0)];
        let plan = prune_and_rewire(
            &scored,
            &spec.model_ids,
            &profiles,
            1e-3,
            &search_params(5),
            OperatingMode::AccuracyPreserving,
        )
        .unwrap();
        assert_eq!(plan.retained.len(), 2);
        assert!(plan.removed.is_empty());
        assert!(plan.energy_benefits[0] > 0.0);
        // Single successor: one band covering [0, t).
        assert_eq!(plan.skip_bands[0].len(), 1);
    }

    #[test]
    fn dead_middle_model_is_pruned() {
        // The middle model adds no capability beyond the small one and
        // costs nearly as much as the giant, so it can never pay for
        // itself.
        let spec = JointAccuracySpec {
            task: TaskKind::Classification,
            class_count: 4,
            gen_steps: 1,
            model_ids: vec![
                ModelId::new("small"),
                ModelId::new("dead"),
                ModelId::new("giant"),
            ],
            marginals: vec![0.6, 0.6, 0.9],
            contributions: vec![0.6, 0.0, 0.3],
            overlap: 0.15,
        };
        let (_, scored) = build(&spec, 500, 29);
        let profiles = vec![
            profile("small", 60, 1.0),
            profile("dead", 1500, 8.0),
            profile("giant", 3000, 10.0),
        ];
        let plan = prune_and_rewire(
            &scored,
            &spec.model_ids,
            &profiles,
            1e-3,
            &search_params(9),
            OperatingMode::AccuracyPreserving,
        )
        .unwrap();
        assert!(
            plan.removed.contains(&ModelId::new("dead")),
            "removed: {:?}",
            plan.removed
        );
        assert!(plan.retained.contains(&ModelId::new("giant")));
        for b in &plan.energy_benefits {
            assert!(*b > 0.0);
        }
    }

    #[test]
    fn prune_loop_matches_manual_replay() {
        let spec = JointAccuracySpec {
            task: TaskKind::Classification,
            class_count: 4,
            gen_steps: 1,
            model_ids: vec![ModelId::new("a"), ModelId::new("b"), ModelId::new("c")],
            marginals: vec![0.5, 0.55, 0.9],
            contributions: vec![0.5, 0.06, 0.34],
            overlap: 0.2,
        };
        let (_, scored) = build(&spec, 100, 33);
        let profiles = vec![
            profile("a", 60, 2.0),
            profile("b", 300, 3.0),
            profile("c", 3000, 12.0),
        ];
        let params = search_params(13);
        let mode = OperatingMode::AccuracyPreserving;
        let plan = prune_and_rewire(&scored, &spec.model_ids, &profiles, 1e-3, &params, mode)
            .unwrap();

        // Manual replay of the loop, step by step.
        let pre_target = scored.standalone_accuracy(2);
        let mut retained = spec.model_ids.clone();
        let mut round = 0u64;
        let final_thresholds = loop {
            let costs = CascadeCosts::from_profiles(&retained, &profiles, 1e-3).unwrap();
            let round_params = SearchParams {
                seed: params.seed.wrapping_add(round),
                ..params.clone()
            };
            let graph = search_scored(&scored, &retained, &costs, &round_params).unwrap();
            let thresholds = select_ap(&graph, pre_target).unwrap().point.thresholds;
            let config = CascadeConfig::sequential(retained.clone(), &thresholds).unwrap();
            let metrics = evaluate_scored(&scored, &config, &costs).unwrap();
            let benefits: Vec<f64> = (0..retained.len() - 1)
                .map(|i| energy_benefit(i, &metrics.reach_fraction, &costs.energy).unwrap())
                .collect();
            if let Some(victim) = benefits.iter().position(|&b| b <= 0.0) {
                retained.remove(victim);
                round += 1;
                continue;
            }
            break thresholds;
        };
        assert_eq!(plan.retained, retained);
        let mut expected = final_thresholds;
        expected.push(0.0);
        assert_eq!(plan.thresholds, expected);
    }

    #[test]
    fn pruning_holds_the_accuracy_requirement() {
        let spec = JointAccuracySpec {
            task: TaskKind::Classification,
            class_count: 4,
            gen_steps: 1,
            model_ids: vec![
                ModelId::new("s"),
                ModelId::new("m"),
                ModelId::new("l"),
            ],
            marginals: vec![0.55, 0.55, 0.88],
            contributions: vec![0.55, 0.01, 0.33],
            overlap: 0.2,
        };
        let (_, scored) = build(&spec, 400, 41);
        let profiles = vec![
            profile("s", 60, 1.0),
            profile("m", 800, 7.0),
            profile("l", 3000, 9.0),
        ];
        let plan = prune_and_rewire(
            &scored,
            &spec.model_ids,
            &profiles,
            1e-3,
            &search_params(17),
            OperatingMode::AccuracyPreserving,
        )
        .unwrap();
        assert!(
            plan.accuracy >= plan.accuracy_requirement,
            "{} < {}",
            plan.accuracy,
            plan.accuracy_requirement
        );
    }

    #[test]
    fn skip_routing_never_answers_smaller_than_sequential() {
        let spec = JointAccuracySpec {
            task: TaskKind::Classification,
            class_count: 4,
            gen_steps: 1,
            model_ids: vec![
                ModelId::new("s"),
                ModelId::new("m"),
                ModelId::new("l"),
            ],
            marginals: vec![0.6, 0.75, 0.9],
            contributions: vec![0.6, 0.18, 0.12],
            overlap: 0.2,
        };
        let (_, scored) = build(&spec, 300, 47);
        let profiles = vec![
            profile("s", 60, 1.0),
            profile("m", 800, 4.0),
            profile("l", 3000, 16.0),
        ];
        let plan = prune_and_rewire(
            &scored,
            &spec.model_ids,
            &profiles,
            1e-3,
            &search_params(23),
            OperatingMode::AccuracyPreserving,
        )
        .unwrap();
        let with_bands = plan.to_config().unwrap();
        let sequential = plan.to_sequential_config().unwrap();
        let costs = CascadeCosts::from_profiles(&plan.retained, &profiles, 1e-3).unwrap();
        let a = evaluate_scored(&scored, &with_bands, &costs).unwrap();
        let b = evaluate_scored(&scored, &sequential, &costs).unwrap();
        // Aggregate form of forward-only skips: cumulative handled mass
        // at each prefix never exceeds the sequential cascade's.
        let mut skip_cum = 0.0;
        let mut seq_cum = 0.0;
        for i in 0..plan.retained.len() {
            skip_cum += a.handled_fraction[i];
            seq_cum += b.handled_fraction[i];
            assert!(skip_cum <= seq_cum + 1e-12);
        }
    }
}
