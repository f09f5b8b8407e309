//! Synthetic trace generator.
//!
//! Reproduces a target joint-accuracy structure: per-model marginal
//! accuracies plus the incremental contribution each model adds when
//! cascaded after the smaller ones. A single per-request difficulty
//! scalar in [0,1) drives correctness for every model, so smaller
//! models' capability overlaps with (but is not a subset of) the larger
//! ones. Logit margins are drawn from overlapping high/low distributions
//! so confidence separates correctness imperfectly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::trace::{Label, ModelId, PredictionRecord, RawOutput, TaskKind, TraceBundle};

/// Target correctness structure for a synthetic family.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct JointAccuracySpec {
    pub task: TaskKind,
    /// Classes for classification, vocabulary size for generation,
    /// context length for question answering.
    pub class_count: usize,
    /// Steps per generation record (ignored for other tasks).
    #[serde(default = "default_gen_steps")]
    pub gen_steps: usize,
    /// Family member ids, small to large.
    pub model_ids: Vec<ModelId>,
    /// Standalone accuracy of each model, same order as `model_ids`.
    pub marginals: Vec<f64>,
    /// Fraction of requests each model answers correctly that every
    /// smaller model gets wrong; `contributions[0] == marginals[0]`.
    pub contributions: Vec<f64>,
    /// Margin-overlap parameter in [0,1): 0 separates correct from
    /// incorrect margins sharply, larger values blur the two regimes.
    #[serde(default = "default_overlap")]
    pub overlap: f64,
}

fn default_gen_steps() -> usize {
    3
}

fn default_overlap() -> f64 {
    0.2
}

/// Correct-region intervals on the difficulty axis for one model.
///
/// Region = [0, marginal - contribution) ∪ [union_before, union_before +
/// contribution): the model shares the easy prefix with its predecessors
/// and adds a fresh slice of its own.
#[derive(Debug, Clone, Copy)]
struct CorrectRegion {
    shared_end: f64,
    fresh_start: f64,
    fresh_end: f64,
}

impl CorrectRegion {
    fn contains(&self, d: f64) -> bool {
        d < self.shared_end || (d >= self.fresh_start && d < self.fresh_end)
    }
}

impl JointAccuracySpec {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        let n = self.model_ids.len();
        if n == 0 {
            return Err(Error::Invariant("spec lists no models".into()));
        }
        if self.marginals.len() != n || self.contributions.len() != n {
            return Err(Error::Shape(
                "marginals and contributions must match model count".into(),
            ));
        }
        if self.class_count < 2 {
            return Err(Error::Invariant("class/vocab dimension must be >= 2".into()));
        }
        if matches!(self.task, TaskKind::Generation { .. }) && self.gen_steps == 0 {
            return Err(Error::Invariant("generation needs >= 1 step".into()));
        }
        if let TaskKind::Generation { top_k } = self.task {
            if top_k > self.class_count {
                return Err(Error::Invariant("top_k exceeds vocabulary size".into()));
            }
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Invariant("overlap must be in [0,1)".into()));
        }
        let joint: f64 = self.contributions.iter().sum();
        if joint > 1.0 + 1e-12 {
            return Err(Error::Infeasible(format!(
                "contributions sum to {joint}, exceeding 1"
            )));
        }
        for (i, (&m, &c)) in self.marginals.iter().zip(&self.contributions).enumerate() {
            if !(0.0..=1.0).contains(&m) || c < 0.0 {
                return Err(Error::Invariant(format!(
                    "model {i}: marginal must be in [0,1] and contribution >= 0"
                )));
            }
            if c > m + 1e-12 {
                return Err(Error::Infeasible(format!(
                    "model {i}: contribution {c} exceeds marginal {m}"
                )));
            }
        }
        self.regions()?;
        Ok(())
    }

    /// Joint accuracy implied by the contributions.
    pub fn joint_accuracy(&self) -> f64 {
        self.contributions.iter().sum()
    }

    fn regions(&self) -> Result<Vec<CorrectRegion>> {
        let mut regions = Vec::with_capacity(self.model_ids.len());
        let mut union = 0.0_f64;
        for (i, (&m, &c)) in self.marginals.iter().zip(&self.contributions).enumerate() {
            let shared = m - c;
            if shared > union + 1e-12 {
                return Err(Error::Infeasible(format!(
                    "model {i}: marginal {m} minus contribution {c} exceeds the \
                     joint accuracy {union} of the smaller models"
                )));
            }
            regions.push(CorrectRegion {
                shared_end: shared.min(union),
                fresh_start: union,
                fresh_end: union + c,
            });
            union += c;
        }
        Ok(regions)
    }
}

/// Deterministically generate `n` records matching `spec`.
pub fn generate_synthetic_trace(
    spec: &JointAccuracySpec,
    n: usize,
    seed: u64,
) -> Result<TraceBundle> {
    spec.validate()?;
    let regions = spec.regions()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let correct_margin = Normal::new(2.5, 0.8).expect("valid normal");
    let wrong_margin = Normal::new(2.5 * spec.overlap, 0.8).expect("valid normal");

    let mut records = Vec::with_capacity(n);
    for request_id in 0..n as u64 {
        let difficulty: f64 = rng.random();
        let label = draw_label(spec, &mut rng);
        let mut outputs = BTreeMap::new();
        for (model, region) in spec.model_ids.iter().zip(&regions) {
            let correct = region.contains(difficulty);
            let out = emit_output(
                spec,
                &label,
                correct,
                difficulty,
                &mut rng,
                &noise,
                &correct_margin,
                &wrong_margin,
            );
            outputs.insert(model.clone(), out);
        }
        records.push(PredictionRecord {
            request_id,
            label,
            outputs,
        });
    }

    let bundle = TraceBundle::new(spec.task, spec.model_ids.clone(), records);
    bundle.validate()?;
    Ok(bundle)
}

fn draw_label(spec: &JointAccuracySpec, rng: &mut ChaCha8Rng) -> Label {
    match spec.task {
        TaskKind::Classification => Label::Class {
            class: rng.random_range(0..spec.class_count),
        },
        TaskKind::Generation { .. } => Label::Tokens {
            tokens: (0..spec.gen_steps)
                .map(|_| rng.random_range(0..spec.class_count))
                .collect(),
        },
        TaskKind::QuestionAnswering => {
            let a = rng.random_range(0..spec.class_count);
            let b = rng.random_range(0..spec.class_count);
            Label::Span {
                start: a.min(b),
                end: a.max(b),
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn emit_output(
    spec: &JointAccuracySpec,
    label: &Label,
    correct: bool,
    difficulty: f64,
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
    correct_margin: &Normal<f64>,
    wrong_margin: &Normal<f64>,
) -> RawOutput {
    // Harder requests get smaller margins even when answered correctly,
    // which couples confidence to downstream correctness.
    let scale = 1.25 - 0.5 * difficulty;
    let margin = |ok: bool, rng: &mut ChaCha8Rng| -> f64 {
        let dist = if ok { correct_margin } else { wrong_margin };
        (dist.sample(rng) * scale).max(0.05)
    };
    match (spec.task, label) {
        (TaskKind::Classification, Label::Class { class }) => {
            let target = if correct {
                *class
            } else {
                wrong_index(*class, spec.class_count, rng)
            };
            let logits = logits_with_argmax(
                spec.class_count,
                target,
                margin(correct, rng),
                rng,
                noise,
            );
            RawOutput::Logits { logits }
        }
        (TaskKind::Generation { .. }, Label::Tokens { tokens }) => {
            let corrupt_step = if correct {
                usize::MAX
            } else {
                rng.random_range(0..tokens.len())
            };
            let steps = tokens
                .iter()
                .enumerate()
                .map(|(s, &tok)| {
                    let ok = s != corrupt_step;
                    let target = if ok {
                        tok
                    } else {
                        wrong_index(tok, spec.class_count, rng)
                    };
                    logits_with_argmax(spec.class_count, target, margin(ok, rng), rng, noise)
                })
                .collect();
            RawOutput::Steps { steps }
        }
        (TaskKind::QuestionAnswering, Label::Span { start, end }) => {
            let corrupt_start = !correct && rng.random::<bool>();
            let corrupt_end = !correct && !corrupt_start;
            let s_target = if corrupt_start {
                wrong_index(*start, spec.class_count, rng)
            } else {
                *start
            };
            let e_target = if corrupt_end {
                wrong_index(*end, spec.class_count, rng)
            } else {
                *end
            };
            RawOutput::SpanLogits {
                start_logits: logits_with_argmax(
                    spec.class_count,
                    s_target,
                    margin(!corrupt_start, rng),
                    rng,
                    noise,
                ),
                end_logits: logits_with_argmax(
                    spec.class_count,
                    e_target,
                    margin(!corrupt_end, rng),
                    rng,
                    noise,
                ),
            }
        }
        _ => unreachable!("label drawn for this task"),
    }
}

fn wrong_index(truth: usize, k: usize, rng: &mut ChaCha8Rng) -> usize {
    let pick = rng.random_range(0..k - 1);
    if pick >= truth {
        pick + 1
    } else {
        pick
    }
}

fn logits_with_argmax(
    k: usize,
    target: usize,
    margin: f64,
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
) -> Vec<f64> {
    let mut logits: Vec<f64> = (0..k).map(|_| noise.sample(rng)).collect();
    let best_other = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    logits[target] = best_other + margin;
    logits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::to_json_bytes;

    fn cola_like() -> JointAccuracySpec {
        JointAccuracySpec {
            task: TaskKind::Classification,
            class_count: 2,
            gen_steps: 1,
            model_ids: vec![
                ModelId::new("small"),
                ModelId::new("medium"),
                ModelId::new("large"),
            ],
            marginals: vec![0.82, 0.70, 0.61],
            contributions: vec![0.82, 0.05, 0.01],
            overlap: 0.2,
        }
    }

    #[test]
    fn marginals_and_contributions_match_spec() {
        let spec = cola_like();
        let bundle = generate_synthetic_trace(&spec, 10_000, 42).unwrap();
        for (i, model) in spec.model_ids.iter().enumerate() {
            let acc = bundle.standalone_accuracy(model);
            assert!(
                (acc - spec.marginals[i]).abs() <= 0.02,
                "model {model}: marginal {acc} vs {}",
                spec.marginals[i]
            );
        }
        // Incremental contribution: correct at i, wrong at every j < i.
        for (i, model) in spec.model_ids.iter().enumerate() {
            let count = bundle
                .records
                .iter()
                .filter(|r| {
                    r.outputs[model].matches(&r.label)
                        && spec.model_ids[..i]
                            .iter()
                            .all(|m| !r.outputs[m].matches(&r.label))
                })
                .count();
            let frac = count as f64 / bundle.len() as f64;
            assert!(
                (frac - spec.contributions[i]).abs() <= 0.02,
                "model {model}: contribution {frac} vs {}",
                spec.contributions[i]
            );
        }
        let joint = bundle.joint_oracle_accuracy();
        assert!((joint - 0.88).abs() <= 0.02, "joint {joint}");
    }

    #[test]
    fn empty_generation() {
        let bundle = generate_synthetic_trace(&cola_like(), 0, 1).unwrap();
        assert!(bundle.is_empty());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic_trace(&cola_like(), 200, 9).unwrap();
        let b = generate_synthetic_trace(&cola_like(), 200, 9).unwrap();
        assert_eq!(to_json_bytes(&a).unwrap(), to_json_bytes(&b).unwrap());
    }

    #[test]
    fn infeasible_contributions_rejected() {
        let mut spec = cola_like();
        spec.contributions = vec![0.82, 0.15, 0.08];
        assert!(matches!(
            generate_synthetic_trace(&spec, 10, 1),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn generation_and_qa_tasks_validate() {
        let mut spec = cola_like();
        spec.task = TaskKind::Generation { top_k: 5 };
        spec.class_count = 32;
        spec.gen_steps = 3;
        let bundle = generate_synthetic_trace(&spec, 2000, 3).unwrap();
        let acc = bundle.standalone_accuracy(&ModelId::new("small"));
        assert!((acc - 0.82).abs() < 0.03, "generation marginal {acc}");

        spec.task = TaskKind::QuestionAnswering;
        spec.class_count = 24;
        let bundle = generate_synthetic_trace(&spec, 2000, 3).unwrap();
        let acc = bundle.standalone_accuracy(&ModelId::new("small"));
        assert!((acc - 0.82).abs() < 0.03, "qa marginal {acc}");
    }
}
