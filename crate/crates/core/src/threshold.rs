//! Threshold performance graph search and operating-point selection.
//!
//! The search samples threshold vectors uniformly over `[0,1]^{n-1}`,
//! evaluates each through the cascade, and refines around samples whose
//! accuracy lands between the two largest models' standalone accuracies.
//! A round that discovers no (accuracy, energy) pair in a previously
//! unoccupied quantization cell ends the search.
//!
//! Two operating points come out of the graph: AP picks the cheapest
//! point matching the largest model's validation accuracy, EO picks the
//! maximum-curvature point of the interpolated pareto frontier above the
//! second-largest model's accuracy.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationTable;
use crate::cascade::{evaluate_scored, CascadeConfig, CascadeCosts, ScoredTrace};
use crate::error::{Error, Result};
use crate::trace::{ModelId, TraceBundle};

/// One sampled operating point: free thresholds plus measured metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfPoint {
    /// Thresholds for models `1..n-1`; the final model's is always 0.
    pub thresholds: Vec<f64>,
    pub accuracy: f64,
    pub energy: f64,
}

/// The sampled threshold performance graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerfGraph {
    pub points: Vec<PerfPoint>,
    /// Indices of the non-dominated subset (higher accuracy, lower energy).
    pub pareto: Vec<usize>,
    /// Standalone validation accuracy of the second-largest model.
    pub accuracy_floor: f64,
    /// Standalone validation accuracy of the largest model.
    pub accuracy_target: f64,
    /// Rounds executed before the novelty test terminated the search.
    pub rounds: usize,
}

impl PerfGraph {
    pub fn pareto_points(&self) -> impl Iterator<Item = &PerfPoint> {
        self.pareto.iter().map(|&i| &self.points[i])
    }

    /// CSV export: one row per point, pareto membership flagged.
    pub fn to_csv(&self) -> String {
        let dims = self.points.first().map_or(0, |p| p.thresholds.len());
        let pareto: HashSet<usize> = self.pareto.iter().copied().collect();
        let mut out = String::new();
        for d in 0..dims {
            out.push_str(&format!("t{},", d + 1));
        }
        out.push_str("accuracy,energy,pareto\n");
        for (i, p) in self.points.iter().enumerate() {
            for t in &p.thresholds {
                out.push_str(&format!("{t},"));
            }
            out.push_str(&format!(
                "{},{},{}\n",
                p.accuracy,
                p.energy,
                u8::from(pareto.contains(&i))
            ));
        }
        out
    }
}

/// Search configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchParams {
    /// Samples drawn per round.
    pub samples_per_round: usize,
    /// Half-width of the refinement box around an in-band sample.
    pub epsilon: f64,
    /// Accuracy quantization cell for the novelty test.
    pub accuracy_cell: f64,
    /// Energy quantization cell as a fraction of the largest model's energy.
    pub energy_cell_frac: f64,
    pub max_rounds: usize,
    /// Refinement batches triggered per round at most.
    pub max_refinements_per_round: usize,
    pub seed: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            samples_per_round: 256,
            epsilon: 0.05,
            accuracy_cell: 0.001,
            energy_cell_frac: 0.005,
            max_rounds: 50,
            max_refinements_per_round: 16,
            seed: 0,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_round < 1 {
            return Err(Error::Invariant("samples_per_round must be >= 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Invariant("epsilon must lie in (0, 0.5)".into()));
        }
        if self.accuracy_cell <= 0.0 || self.energy_cell_frac <= 0.0 || self.max_rounds == 0 {
            return Err(Error::Invariant("quantization cells and rounds must be positive".into()));
        }
        Ok(())
    }
}

/// Search over a raw trace (scores computed once internally).
pub fn search(
    trace: &TraceBundle,
    models: &[ModelId],
    calib: &CalibrationTable,
    costs: &CascadeCosts,
    params: &SearchParams,
) -> Result<PerfGraph> {
    let scored = ScoredTrace::new(trace, calib)?;
    search_scored(&scored, models, costs, params)
}

/// Search over precomputed scores.
pub fn search_scored(
    scored: &ScoredTrace,
    models: &[ModelId],
    costs: &CascadeCosts,
    params: &SearchParams,
) -> Result<PerfGraph> {
    params.validate()?;
    let n = models.len();
    if n < 2 {
        return Err(Error::Invariant(format!(
            "threshold search needs >= 2 models, got {n}"
        )));
    }
    if scored.is_empty() {
        return Err(Error::EmptyInput("cannot search an empty trace".into()));
    }
    let dims = n - 1;
    let col = |m: &ModelId| {
        scored
            .models
            .iter()
            .position(|x| x == m)
            .ok_or_else(|| Error::MissingModel(format!("{m} not in scored trace")))
    };
    let accuracy_floor = scored.standalone_accuracy(col(&models[n - 2])?);
    let accuracy_target = scored.standalone_accuracy(col(&models[n - 1])?);
    let giant_energy = costs.energy[n - 1];
    let energy_cell = params.energy_cell_frac * giant_energy;

    let eval = |thresholds: &[f64]| -> Result<PerfPoint> {
        let config = CascadeConfig::sequential(models.to_vec(), thresholds)?;
        let m = evaluate_scored(scored, &config, costs)?;
        Ok(PerfPoint {
            thresholds: thresholds.to_vec(),
            accuracy: m.accuracy,
            energy: m.energy_per_request,
        })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut cells: HashSet<(i64, i64)> = HashSet::new();
    let quantize = |a: f64, e: f64| -> (i64, i64) {
        (
            (a / params.accuracy_cell).floor() as i64,
            (e / energy_cell).floor() as i64,
        )
    };

    let mut points: Vec<PerfPoint> = Vec::new();
    let mut rounds = 0;
    for round in 0..params.max_rounds {
        rounds = round + 1;
        let mut batch: Vec<Vec<f64>> = Vec::new();
        if round == 0 {
            // Deterministic corner anchors: model-1-only and full escalation.
            batch.push(vec![0.0; dims]);
            batch.push(vec![1.0; dims]);
        }
        for _ in 0..params.samples_per_round {
            batch.push((0..dims).map(|_| rng.random::<f64>()).collect());
        }
        let evaluated: Vec<PerfPoint> = batch
            .par_iter()
            .map(|t| eval(t))
            .collect::<Result<_>>()?;

        let mut new_cell = false;
        let mut refine_around: Vec<Vec<f64>> = Vec::new();
        for p in evaluated {
            let fresh = cells.insert(quantize(p.accuracy, p.energy));
            new_cell |= fresh;
            if fresh
                && p.accuracy >= accuracy_floor
                && p.accuracy <= accuracy_target
                && refine_around.len() < params.max_refinements_per_round
            {
                refine_around.push(p.thresholds.clone());
            }
            points.push(p);
        }

        for center in refine_around {
            let mut refined: Vec<Vec<f64>> = Vec::new();
            for _ in 0..params.samples_per_round {
                refined.push(
                    center
                        .iter()
                        .map(|&c| {
                            let lo = (c - params.epsilon).max(0.0);
                            let hi = (c + params.epsilon).min(1.0);
                            lo + (hi - lo) * rng.random::<f64>()
                        })
                        .collect(),
                );
            }
            let evaluated: Vec<PerfPoint> = refined
                .par_iter()
                .map(|t| eval(t))
                .collect::<Result<_>>()?;
            for p in evaluated {
                new_cell |= cells.insert(quantize(p.accuracy, p.energy));
                points.push(p);
            }
        }

        if !new_cell {
            break;
        }
    }

    let pareto = pareto_indices(&points);
    Ok(PerfGraph {
        points,
        pareto,
        accuracy_floor,
        accuracy_target,
        rounds,
    })
}

/// Indices of the non-dominated subset, sorted by descending accuracy.
/// Points with identical (accuracy, energy) to a frontier point stay on
/// the frontier: nothing strictly dominates them.
fn pareto_indices(points: &[PerfPoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[j]
            .accuracy
            .partial_cmp(&points[i].accuracy)
            .expect("finite accuracy")
            .then(
                points[i]
                    .energy
                    .partial_cmp(&points[j].energy)
                    .expect("finite energy"),
            )
            .then(i.cmp(&j))
    });
    let mut pareto = Vec::new();
    let mut best_energy = f64::INFINITY;
    let mut kept_accuracy = f64::NEG_INFINITY;
    for idx in order {
        let p = &points[idx];
        if p.energy < best_energy {
            best_energy = p.energy;
            kept_accuracy = p.accuracy;
            pareto.push(idx);
        } else if p.energy == best_energy && p.accuracy == kept_accuracy {
            pareto.push(idx);
        }
    }
    pareto
}

/// A selected operating point plus a flag for fallback selections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectedPoint {
    pub point: PerfPoint,
    /// AP: no point reached the target accuracy. EO: fewer than three
    /// qualifying pareto points forced the minimum-energy fallback.
    pub fallback: bool,
}

/// Accuracy-preserving selection: cheapest point with accuracy at or
/// above the largest model's; falls back to the highest-accuracy point.
pub fn select_ap(graph: &PerfGraph, accuracy_target: f64) -> Result<SelectedPoint> {
    if graph.points.is_empty() {
        return Err(Error::EmptyInput("performance graph has no points".into()));
    }
    let qualifying = graph
        .points
        .iter()
        .filter(|p| p.accuracy >= accuracy_target)
        .min_by(|a, b| {
            a.energy
                .partial_cmp(&b.energy)
                .expect("finite energy")
                .then(b.accuracy.partial_cmp(&a.accuracy).expect("finite accuracy"))
        });
    if let Some(p) = qualifying {
        return Ok(SelectedPoint {
            point: p.clone(),
            fallback: false,
        });
    }
    let best = graph
        .points
        .iter()
        .max_by(|a, b| {
            a.accuracy
                .partial_cmp(&b.accuracy)
                .expect("finite accuracy")
                .then(b.energy.partial_cmp(&a.energy).expect("finite energy"))
        })
        .expect("nonempty");
    Ok(SelectedPoint {
        point: best.clone(),
        fallback: true,
    })
}

/// Energy-optimizing selection: the pareto-frontier point nearest the
/// maximum of the discrete second difference of the piecewise-linearly
/// interpolated energy-vs-accuracy curve. Both the knee search and the
/// returned point are confined to the band between the accuracy floor
/// and the largest model's accuracy: the mode trades a small drop below
/// the giant, never a climb above it.
pub fn select_eo(graph: &PerfGraph, accuracy_floor: f64) -> Result<SelectedPoint> {
    const GRID_STEP: f64 = 0.001;
    if graph.points.is_empty() {
        return Err(Error::EmptyInput("performance graph has no points".into()));
    }
    let cap = graph.accuracy_target.max(accuracy_floor);
    // Frontier sorted by ascending accuracy.
    let mut frontier: Vec<&PerfPoint> = graph.pareto_points().collect();
    frontier.sort_by(|a, b| a.accuracy.partial_cmp(&b.accuracy).expect("finite"));
    let qualifying: Vec<&PerfPoint> = frontier
        .iter()
        .copied()
        .filter(|p| p.accuracy >= accuracy_floor && p.accuracy <= cap)
        .collect();
    if qualifying.is_empty() {
        return Err(Error::Invariant(format!(
            "no pareto point lies in the accuracy band [{accuracy_floor}, {cap}]"
        )));
    }
    let min_energy_fallback = || SelectedPoint {
        point: (*qualifying
            .iter()
            .min_by(|a, b| a.energy.partial_cmp(&b.energy).expect("finite"))
            .expect("nonempty"))
        .clone(),
        fallback: true,
    };
    let span = frontier.last().expect("nonempty").accuracy - frontier[0].accuracy;
    if qualifying.len() < 3 || span < 2.0 * GRID_STEP {
        return Ok(min_energy_fallback());
    }

    let a0 = frontier[0].accuracy;
    let steps = (span / GRID_STEP).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|j| a0 + j as f64 * GRID_STEP).collect();
    let interp: Vec<f64> = grid.iter().map(|&a| interp_energy(&frontier, a)).collect();

    // Constrained argmax of the second difference; near-ties resolve
    // toward the lowest interpolated energy.
    let mut best: Option<(usize, f64)> = None;
    for j in 1..grid.len().saturating_sub(1) {
        let d2 = interp[j - 1] - 2.0 * interp[j] + interp[j + 1];
        if grid[j] < accuracy_floor || grid[j] > cap {
            continue;
        }
        match best {
            None => best = Some((j, d2)),
            Some((bj, bd2)) => {
                let tie = (d2 - bd2).abs() <= 1e-12 * bd2.abs().max(1.0);
                if (tie && interp[j] < interp[bj]) || (!tie && d2 > bd2) {
                    best = Some((j, d2));
                }
            }
        }
    }
    let Some((knee, _)) = best else {
        return Ok(min_energy_fallback());
    };
    let knee_a = grid[knee];
    let point = qualifying
        .iter()
        .min_by(|a, b| {
            let da = (a.accuracy - knee_a).abs();
            let db = (b.accuracy - knee_a).abs();
            da.partial_cmp(&db)
                .expect("finite")
                .then(a.energy.partial_cmp(&b.energy).expect("finite"))
        })
        .expect("nonempty");
    Ok(SelectedPoint {
        point: (*point).clone(),
        fallback: false,
    })
}

/// Piecewise-linear interpolation of frontier energy at accuracy `a`.
fn interp_energy(frontier: &[&PerfPoint], a: f64) -> f64 {
    debug_assert!(!frontier.is_empty());
    if a <= frontier[0].accuracy {
        return frontier[0].energy;
    }
    for w in frontier.windows(2) {
        if a <= w[1].accuracy {
            let (a0, e0) = (w[0].accuracy, w[0].energy);
            let (a1, e1) = (w[1].accuracy, w[1].energy);
            if a1 - a0 <= f64::EPSILON {
                return e1;
            }
            return e0 + (e1 - e0) * (a - a0) / (a1 - a0);
        }
    }
    frontier.last().expect("nonempty").energy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::calibrate_family;
    use crate::trace::{generate_synthetic_trace, JointAccuracySpec, TaskKind};

    fn two_model_setup() -> (ScoredTrace, Vec<ModelId>, CascadeCosts, f64, f64) {
        let spec = JointAccuracySpec {
            task: TaskKind::Classification,
            class_count: 4,
            gen_steps: 1,
            model_ids: vec![ModelId::new("m1"), ModelId::new("m2")],
            marginals: vec![0.6, 0.85],
            contributions: vec![0.6, 0.25],
            overlap: 0.2,
        };
        let trace = generate_synthetic_trace(&spec, 200, 5).unwrap();
        let calib = calibrate_family(&trace).unwrap();
        let scored = ScoredTrace::new(&trace, &calib).unwrap();
        let costs = CascadeCosts {
            energy: vec![1.0, 10.0],
            latency: vec![0.004, 0.04],
            hop_overhead: 1e-3,
        };
        let a1 = scored.standalone_accuracy(0);
        let a2 = scored.standalone_accuracy(1);
        (scored, spec.model_ids, costs, a1, a2)
    }

    #[test]
    fn two_model_search_matches_grid_oracle() {
        let (scored, models, costs, _, a2) = two_model_setup();
        let params = SearchParams {
            samples_per_round: 64,
            seed: 3,
            ..SearchParams::default()
        };
        let graph = search_scored(&scored, &models, &costs, &params).unwrap();
        let ap = select_ap(&graph, a2).unwrap();
        assert!(!ap.fallback);

        // Exhaustive 101-point oracle over t1 in {0, 0.01, ..., 1}.
        let mut oracle_e = f64::INFINITY;
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let config = CascadeConfig::sequential(models.clone(), &[t]).unwrap();
            let m = evaluate_scored(&scored, &config, &costs).unwrap();
            if m.accuracy >= a2 && m.energy_per_request < oracle_e {
                oracle_e = m.energy_per_request;
            }
        }
        assert!(
            (ap.point.energy - oracle_e).abs() <= 0.02 * oracle_e,
            "search {} vs oracle {}",
            ap.point.energy,
            oracle_e
        );
    }

    #[test]
    fn search_is_deterministic() {
        let (scored, models, costs, _, _) = two_model_setup();
        let params = SearchParams {
            samples_per_round: 32,
            seed: 11,
            max_rounds: 6,
            ..SearchParams::default()
        };
        let a = search_scored(&scored, &models, &costs, &params).unwrap();
        let b = search_scored(&scored, &models, &costs, &params).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }

    #[test]
    fn points_are_a_pure_cache() {
        let (scored, models, costs, _, _) = two_model_setup();
        let params = SearchParams {
            samples_per_round: 16,
            seed: 2,
            max_rounds: 3,
            ..SearchParams::default()
        };
        let graph = search_scored(&scored, &models, &costs, &params).unwrap();
        for p in graph.points.iter().take(40) {
            let config = CascadeConfig::sequential(models.clone(), &p.thresholds).unwrap();
            let m = evaluate_scored(&scored, &config, &costs).unwrap();
            assert_eq!(m.accuracy, p.accuracy);
            assert_eq!(m.energy_per_request, p.energy);
        }
    }

    #[test]
    fn pareto_set_is_correct() {
        let (scored, models, costs, _, _) = two_model_setup();
        let params = SearchParams {
            samples_per_round: 64,
            seed: 7,
            ..SearchParams::default()
        };
        let graph = search_scored(&scored, &models, &costs, &params).unwrap();
        let pareto: Vec<&PerfPoint> = graph.pareto_points().collect();
        // No pareto point dominates another.
        for a in &pareto {
            for b in &pareto {
                let dominates = a.accuracy >= b.accuracy
                    && a.energy <= b.energy
                    && (a.accuracy > b.accuracy || a.energy < b.energy);
                assert!(!dominates || std::ptr::eq(*a, *b));
            }
        }
        // Every non-pareto point is dominated by some pareto point.
        let pareto_idx: HashSet<usize> = graph.pareto.iter().copied().collect();
        for (i, p) in graph.points.iter().enumerate() {
            if pareto_idx.contains(&i) {
                continue;
            }
            assert!(
                pareto.iter().any(|q| q.accuracy >= p.accuracy
                    && q.energy <= p.energy
                    && (q.accuracy > p.accuracy || q.energy < p.energy)),
                "point {i} is neither pareto nor dominated"
            );
        }
        // Frontier sorted by accuracy has nondecreasing energy.
        let mut sorted = pareto.clone();
        sorted.sort_by(|a, b| a.accuracy.partial_cmp(&b.accuracy).unwrap());
        for w in sorted.windows(2) {
            assert!(w[1].energy >= w[0].energy);
        }
    }

    #[test]
    fn ap_picks_min_energy_and_falls_back() {
        let graph = PerfGraph {
            points: vec![
                PerfPoint {
                    thresholds: vec![0.5],
                    accuracy: 0.9,
                    energy: 0.7,
                },
                PerfPoint {
                    thresholds: vec![0.4],
                    accuracy: 0.9,
                    energy: 0.4,
                },
                PerfPoint {
                    thresholds: vec![0.1],
                    accuracy: 0.8,
                    energy: 0.2,
                },
            ],
            pareto: vec![1, 2],
            accuracy_floor: 0.8,
            accuracy_target: 0.9,
            rounds: 1,
        };
        let ap = select_ap(&graph, 0.9).unwrap();
        assert_eq!(ap.point.energy, 0.4);
        assert!(!ap.fallback);

        let ap = select_ap(&graph, 0.95).unwrap();
        assert!(ap.fallback);
        assert_eq!(ap.point.accuracy, 0.9);
        assert_eq!(ap.point.energy, 0.4);
    }

    /// Independent oracle: rebuild the piecewise-linear interpolation and
    /// its second differences from scratch and locate the curvature max.
    fn curvature_oracle(frontier: &[(f64, f64)], floor: f64) -> f64 {
        let step = 0.001;
        let a0 = frontier[0].0;
        let a1 = frontier.last().unwrap().0;
        let n = ((a1 - a0) / step).floor() as usize;
        let interp = |a: f64| -> f64 {
            if a <= frontier[0].0 {
                return frontier[0].1;
            }
            for w in frontier.windows(2) {
                if a <= w[1].0 {
                    return w[0].1 + (w[1].1 - w[0].1) * (a - w[0].0) / (w[1].0 - w[0].0);
                }
            }
            frontier.last().unwrap().1
        };
        let mut best_j = usize::MAX;
        let mut best_d2 = f64::NEG_INFINITY;
        let mut best_e = f64::INFINITY;
        for j in 1..n {
            let a = a0 + j as f64 * step;
            if a < floor {
                continue;
            }
            let d2 = interp(a - step) - 2.0 * interp(a) + interp(a + step);
            let e = interp(a);
            let tie = (d2 - best_d2).abs() <= 1e-12 * best_d2.abs().max(1.0);
            if (tie && e < best_e) || (!tie && d2 > best_d2) {
                best_j = j;
                best_d2 = d2;
                best_e = e;
            }
        }
        a0 + best_j as f64 * step
    }

    #[test]
    fn eo_picks_reconstruction_curvature_max_on_quadratic() {
        // Convex quadratic e(a) sampled at 20 uneven frontier points.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(31);
        let mut accs: Vec<f64> = (0..20)
            .map(|_| 0.6 + 0.3 * rand::Rng::random::<f64>(&mut rng))
            .collect();
        accs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let points: Vec<PerfPoint> = accs
            .iter()
            .map(|&a| PerfPoint {
                thresholds: vec![a],
                accuracy: a,
                energy: 40.0 * (a - 0.55) * (a - 0.55) + 1.0,
            })
            .collect();
        let pareto = (0..points.len()).collect();
        let graph = PerfGraph {
            points: points.clone(),
            pareto,
            accuracy_floor: 0.6,
            accuracy_target: 0.9,
            rounds: 1,
        };
        let eo = select_eo(&graph, 0.6).unwrap();
        assert!(!eo.fallback);

        let frontier: Vec<(f64, f64)> = points.iter().map(|p| (p.accuracy, p.energy)).collect();
        let knee = curvature_oracle(&frontier, 0.6);
        let expected = points
            .iter()
            .filter(|p| p.accuracy >= 0.6)
            .min_by(|a, b| {
                ((a.accuracy - knee).abs())
                    .partial_cmp(&(b.accuracy - knee).abs())
                    .unwrap()
            })
            .unwrap();
        assert_eq!(eo.point.accuracy, expected.accuracy);
    }

    #[test]
    fn eo_linear_frontier_breaks_ties_toward_low_energy() {
        let points: Vec<PerfPoint> = (0..15)
            .map(|i| {
                let a = 0.6 + 0.02 * i as f64;
                PerfPoint {
                    thresholds: vec![a],
                    accuracy: a,
                    energy: 2.0 * a,
                }
            })
            .collect();
        let graph = PerfGraph {
            pareto: (0..points.len()).collect(),
            points,
            accuracy_floor: 0.6,
            accuracy_target: 0.88,
            rounds: 1,
        };
        let eo = select_eo(&graph, 0.6).unwrap();
        assert_eq!(eo.point.accuracy, 0.6, "lowest-energy end of a flat ridge");
    }

    #[test]
    fn eo_falls_back_below_three_points() {
        let points = vec![
            PerfPoint {
                thresholds: vec![0.2],
                accuracy: 0.7,
                energy: 1.0,
            },
            PerfPoint {
                thresholds: vec![0.8],
                accuracy: 0.9,
                energy: 5.0,
            },
        ];
        let graph = PerfGraph {
            pareto: vec![0, 1],
            points,
            accuracy_floor: 0.65,
            accuracy_target: 0.9,
            rounds: 1,
        };
        let eo = select_eo(&graph, 0.65).unwrap();
        assert!(eo.fallback);
        assert_eq!(eo.point.energy, 1.0);
    }

    #[test]
    fn never_correct_first_model_rarely_answers_at_target() {
        let spec = JointAccuracySpec {
            task: TaskKind::Classification,
            class_count: 4,
            gen_steps: 1,
            model_ids: vec![ModelId::new("m1"), ModelId::new("m2")],
            marginals: vec![0.0, 0.85],
            contributions: vec![0.0, 0.85],
            overlap: 0.2,
        };
        let trace = generate_synthetic_trace(&spec, 400, 9).unwrap();
        let calib = calibrate_family(&trace).unwrap();
        let scored = ScoredTrace::new(&trace, &calib).unwrap();
        let costs = CascadeCosts {
            energy: vec![1.0, 10.0],
            latency: vec![0.004, 0.04],
            hop_overhead: 1e-3,
        };
        let params = SearchParams {
            samples_per_round: 64,
            seed: 4,
            ..SearchParams::default()
        };
        let graph = search_scored(&scored, &spec.model_ids, &costs, &params).unwrap();
        let a_target = graph.accuracy_target;
        for p in &graph.points {
            if p.accuracy >= a_target {
                let config =
                    CascadeConfig::sequential(spec.model_ids.clone(), &p.thresholds).unwrap();
                let m = evaluate_scored(&scored, &config, &costs).unwrap();
                assert!(
                    m.handled_fraction[0] <= 1.0 - a_target + 1e-9,
                    "a model that is never correct cannot answer at target accuracy"
                );
            }
        }
    }

    #[test]
    fn fewer_than_two_models_rejected() {
        let (scored, models, costs, _, _) = two_model_setup();
        let params = SearchParams::default();
        let single = CascadeCosts {
            energy: vec![costs.energy[0]],
            latency: vec![costs.latency[0]],
            hop_overhead: costs.hop_overhead,
        };
        assert!(search_scored(&scored, &models[..1], &single, &params).is_err());
    }
}
