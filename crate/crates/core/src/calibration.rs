//! Confidence score functions and temperature fitting.
//!
//! Each model gets one scalar temperature per task, fitted by minimizing
//! mean cross-entropy of the temperature-scaled softmax on a validation
//! trace. Scoring maps raw outputs to a confidence in [0,1]:
//!
//! - classification: squared max of `softmax(logits / t)`
//! - generation: per step, softmax over the `top_k` largest logits, squared
//!   max; the sequence score is the minimum over steps
//! - question answering: minimum of the classification score on the start
//!   and end logits
//!
//! Temperature scaling divides logits by a positive scalar before the
//! softmax, so the argmax — and therefore every returned prediction — is
//! unchanged by calibration.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Label, ModelId, RawOutput, TaskKind, TraceBundle, SCHEMA_VERSION};

/// Lower/upper clamp for fitted temperatures (`e^-4`, `e^4`).
pub const LOG_TEMP_RANGE: (f64, f64) = (-4.0, 4.0);

/// A fitted positive scaling temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureParam {
    pub value: f64,
}

impl TemperatureParam {
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::Invariant(format!(
                "temperature must be positive and finite, got {value}"
            )));
        }
        Ok(TemperatureParam { value })
    }
}

/// Confidence score in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ConfidenceScore(f64);

impl ConfidenceScore {
    fn new(c: f64) -> Self {
        ConfidenceScore(c.clamp(0.0, 1.0))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Result of fitting one (model, task) temperature.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FittedTemperature {
    pub temperature: f64,
    /// Set when the loss was flat and the fit fell back to 1.0.
    pub warning: bool,
}

/// Fitted temperatures for a family, serialized to the calibration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub schema_version: u32,
    pub task: TaskKind,
    pub entries: BTreeMap<ModelId, FittedTemperature>,
}

impl CalibrationTable {
    pub fn temperature(&self, model: &ModelId) -> Result<TemperatureParam> {
        let entry = self
            .entries
            .get(model)
            .ok_or_else(|| Error::MissingModel(format!("no calibration entry for {model}")))?;
        TemperatureParam::new(entry.temperature)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, crate::trace::to_json_bytes(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let table: CalibrationTable = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        for (model, entry) in &table.entries {
            TemperatureParam::new(entry.temperature)
                .map_err(|_| Error::Invariant(format!("bad temperature for {model}")))?;
        }
        Ok(table)
    }
}

/// Fit temperatures for every model in the bundle.
pub fn calibrate_family(trace: &TraceBundle) -> Result<CalibrationTable> {
    let mut entries = BTreeMap::new();
    for model in &trace.models {
        let samples: Vec<(&RawOutput, &Label)> = trace
            .records
            .iter()
            .map(|r| (&r.outputs[model], &r.label))
            .collect();
        let fitted = fit_temperature(&samples, trace.task)?;
        entries.insert(model.clone(), fitted);
    }
    Ok(CalibrationTable {
        schema_version: SCHEMA_VERSION,
        task: trace.task,
        entries,
    })
}

/// Fit one temperature by coarse log-grid bracketing followed by
/// golden-section refinement on log-temperature.
pub fn fit_temperature(
    samples: &[(&RawOutput, &Label)],
    task: TaskKind,
) -> Result<FittedTemperature> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no calibration samples".into()));
    }
    task.validate()?;
    let loss_at = |ln_t: f64| mean_cross_entropy(samples, ln_t.exp());

    // 50-point coarse grid plus the uncalibrated point t = 1, so the fit
    // can never end up worse than no calibration.
    let (lo, hi) = LOG_TEMP_RANGE;
    let mut grid: Vec<f64> = (0..50)
        .map(|i| lo + (hi - lo) * i as f64 / 49.0)
        .collect();
    grid.push(0.0);

    let mut best_ln = 0.0;
    let mut best_loss = f64::INFINITY;
    let mut min_loss = f64::INFINITY;
    let mut max_loss = f64::NEG_INFINITY;
    for &ln_t in &grid {
        let l = loss_at(ln_t)?;
        min_loss = min_loss.min(l);
        max_loss = max_loss.max(l);
        if l < best_loss {
            best_loss = l;
            best_ln = ln_t;
        }
    }
    if max_loss - min_loss < 1e-12 {
        return Ok(FittedTemperature {
            temperature: 1.0,
            warning: true,
        });
    }

    // Golden-section inside one grid step either side of the best point.
    let step = (hi - lo) / 49.0;
    let mut a = (best_ln - step).max(lo);
    let mut b = (best_ln + step).min(hi);
    let gr = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - gr * (b - a);
    let mut d = a + gr * (b - a);
    let mut fc = loss_at(c)?;
    let mut fd = loss_at(d)?;
    while b - a > 1e-4 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = loss_at(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = loss_at(d)?;
        }
        if fc < best_loss {
            best_loss = fc;
            best_ln = c;
        }
        if fd < best_loss {
            best_loss = fd;
            best_ln = d;
        }
    }
    Ok(FittedTemperature {
        temperature: best_ln.exp(),
        warning: false,
    })
}

/// Mean cross-entropy of the temperature-scaled softmax against labels.
fn mean_cross_entropy(samples: &[(&RawOutput, &Label)], temp: f64) -> Result<f64> {
    let mut total = 0.0;
    for (out, label) in samples {
        let ce = match (out, label) {
            (RawOutput::Logits { logits }, Label::Class { class }) => {
                cross_entropy(logits, *class, temp)?
            }
            (RawOutput::Steps { steps }, Label::Tokens { tokens }) => {
                if steps.is_empty() {
                    return Err(Error::Shape("generation output has zero steps".into()));
                }
                let mut s = 0.0;
                for (step, &tok) in steps.iter().zip(tokens) {
                    s += cross_entropy(step, tok, temp)?;
                }
                s / steps.len() as f64
            }
            (
                RawOutput::SpanLogits {
                    start_logits,
                    end_logits,
                },
                Label::Span { start, end },
            ) => {
                0.5 * (cross_entropy(start_logits, *start, temp)?
                    + cross_entropy(end_logits, *end, temp)?)
            }
            _ => return Err(Error::Shape("output/label mismatch in calibration".into())),
        };
        total += ce;
    }
    Ok(total / samples.len() as f64)
}

fn cross_entropy(logits: &[f64], target: usize, temp: f64) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::Shape("label index out of range".into()));
    }
    check_logits(logits)?;
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = logits.iter().map(|&z| ((z - m) / temp).exp()).sum();
    Ok(lse.ln() - (logits[target] - m) / temp)
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::Shape(format!(
            "need >= 2 logits, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape("non-finite logit".into()));
    }
    Ok(())
}

/// Squared max of the temperature-scaled softmax.
pub fn score_classification(logits: &[f64], temp: TemperatureParam) -> Result<ConfidenceScore> {
    check_logits(logits)?;
    let p = max_softmax(logits, temp.value);
    Ok(ConfidenceScore::new(p * p))
}

/// Scoring branch for outputs that are already probabilities: square the
/// renormalized max, then recalibrate with a power transform `^ (1/t)`.
pub fn score_classification_probs(
    probs: &[f64],
    temp: TemperatureParam,
) -> Result<ConfidenceScore> {
    if probs.len() < 2 {
        return Err(Error::Shape(format!(
            "need >= 2 probabilities, got {}",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Shape("probabilities must be finite and >= 0".into()));
    }
    let sum: f64 = probs.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Shape("probabilities sum to zero".into()));
    }
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max) / sum;
    Ok(ConfidenceScore::new((max * max).powf(1.0 / temp.value)))
}

/// Per-step top-k restricted score; the sequence score is the minimum.
pub fn score_generation(
    step_logits: &[Vec<f64>],
    temp: TemperatureParam,
    top_k: usize,
) -> Result<ConfidenceScore> {
    if step_logits.is_empty() {
        return Err(Error::EmptyInput("generation output has zero steps".into()));
    }
    if top_k < 2 {
        return Err(Error::Invariant(format!("top_k must be >= 2, got {top_k}")));
    }
    let mut min_c = f64::INFINITY;
    for step in step_logits {
        check_logits(step)?;
        if top_k > step.len() {
            return Err(Error::Shape(format!(
                "top_k {top_k} exceeds vocabulary {}",
                step.len()
            )));
        }
        let mut top: Vec<f64> = step.clone();
        top.sort_by(|a, b| b.partial_cmp(a).expect("finite logits"));
        top.truncate(top_k);
        let p = max_softmax(&top, temp.value);
        min_c = min_c.min(p * p);
    }
    Ok(ConfidenceScore::new(min_c))
}

/// Minimum of the classification score on start and end logits.
pub fn score_qa(
    start_logits: &[f64],
    end_logits: &[f64],
    temp: TemperatureParam,
) -> Result<ConfidenceScore> {
    if start_logits.len() != end_logits.len() {
        return Err(Error::Shape(format!(
            "start/end length mismatch: {} vs {}",
            start_logits.len(),
            end_logits.len()
        )));
    }
    let s = score_classification(start_logits, temp)?;
    let e = score_classification(end_logits, temp)?;
    Ok(ConfidenceScore::new(s.value().min(e.value())))
}

/// Score any raw output under its task kind.
pub fn score_output(
    output: &RawOutput,
    task: TaskKind,
    temp: TemperatureParam,
) -> Result<ConfidenceScore> {
    match (task, output) {
        (TaskKind::Classification, RawOutput::Logits { logits }) => {
            score_classification(logits, temp)
        }
        (TaskKind::Generation { top_k }, RawOutput::Steps { steps }) => {
            score_generation(steps, temp, top_k)
        }
        (
            TaskKind::QuestionAnswering,
            RawOutput::SpanLogits {
                start_logits,
                end_logits,
            },
        ) => score_qa(start_logits, end_logits, temp),
        _ => Err(Error::Shape("output shape does not match task".into())),
    }
}

fn max_softmax(logits: &[f64], temp: f64) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| ((z - m) / temp).exp()).sum();
    1.0 / sum
}
