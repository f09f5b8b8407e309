//! Prediction traces, model profiles, and cluster specifications.
//!
//! Everything downstream consumes the three input files loaded here. All
//! files are JSON with a `schema_version` field; numbers are serialized in
//! shortest round-trip decimal form so fixtures stay diff-able. Field-level
//! documentation lives in `docs/schemas.md`.

mod generate;

pub use generate::{generate_synthetic_trace, JointAccuracySpec};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Current version stamped into every file this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Identifier of one model in a family.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(pub String);

impl ModelId {
    pub fn new(s: impl Into<String>) -> Self {
        ModelId(s.into())
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Inference task kind; fixes label and output shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    /// Next-token generation; scoring restricts each step to its `top_k`
    /// largest logits before the softmax.
    Generation { top_k: usize },
    QuestionAnswering,
}

impl TaskKind {
    pub fn validate(&self) -> Result<()> {
        if let TaskKind::Generation { top_k } = self {
            if *top_k < 2 {
                return Err(Error::Invariant(format!(
                    "generation top_k must be >= 2, got {top_k}"
                )));
            }
        }
        Ok(())
    }
}

/// Ground-truth answer for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    /// Classification: index of the true class.
    Class { class: usize },
    /// Generation: the reference token-id sequence.
    Tokens { tokens: Vec<usize> },
    /// Question answering: start/end token indices into the context.
    Span { start: usize, end: usize },
}

/// Raw model output for one request, shape depending on the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawOutput {
    /// Classification: one logits vector, length = class count.
    Logits { logits: Vec<f64> },
    /// Generation: one logits vector per emitted step, length = vocab size.
    Steps { steps: Vec<Vec<f64>> },
    /// Question answering: start/end logits over the context tokens.
    SpanLogits {
        start_logits: Vec<f64>,
        end_logits: Vec<f64>,
    },
}

impl RawOutput {
    fn all_finite(&self) -> bool {
        match self {
            RawOutput::Logits { logits } => logits.iter().all(|v| v.is_finite()),
            RawOutput::Steps { steps } => {
                steps.iter().all(|s| s.iter().all(|v| v.is_finite()))
            }
            RawOutput::SpanLogits {
                start_logits,
                end_logits,
            } => {
                start_logits.iter().all(|v| v.is_finite())
                    && end_logits.iter().all(|v| v.is_finite())
            }
        }
    }

    /// Index the output predicts, in the same space as the label.
    ///
    /// Generation returns the per-step argmax sequence; the caller compares
    /// it against the reference tokens.
    pub fn argmax_prediction(&self) -> Prediction {
        match self {
            RawOutput::Logits { logits } => Prediction::Class(argmax(logits)),
            RawOutput::Steps { steps } => {
                Prediction::Tokens(steps.iter().map(|s| argmax(s)).collect())
            }
            RawOutput::SpanLogits {
                start_logits,
                end_logits,
            } => Prediction::Span(argmax(start_logits), argmax(end_logits)),
        }
    }

    /// Whether the argmax prediction matches the label.
    pub fn matches(&self, label: &Label) -> bool {
        match (self.argmax_prediction(), label) {
            (Prediction::Class(c), Label::Class { class }) => c == *class,
            (Prediction::Tokens(t), Label::Tokens { tokens }) => &t == tokens,
            (Prediction::Span(s, e), Label::Span { start, end }) => s == *start && e == *end,
            _ => false,
        }
    }
}

/// Decoded argmax of a raw output.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class(usize),
    Tokens(Vec<usize>),
    Span(usize, usize),
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// One request: ground truth plus every family member's raw output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub request_id: u64,
    pub label: Label,
    /// Keyed by model id; ordered map so serialization is deterministic.
    pub outputs: BTreeMap<ModelId, RawOutput>,
}

/// A validated trace: the task, the family order, and the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBundle {
    pub schema_version: u32,
    pub task: TaskKind,
    /// Family members ordered small to large.
    pub models: Vec<ModelId>,
    pub records: Vec<PredictionRecord>,
}

impl TraceBundle {
    pub fn new(task: TaskKind, models: Vec<ModelId>, records: Vec<PredictionRecord>) -> Self {
        TraceBundle {
            schema_version: SCHEMA_VERSION,
            task,
            models,
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Standalone accuracy of one model over this trace.
    pub fn standalone_accuracy(&self, model: &ModelId) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let correct = self
            .records
            .iter()
            .filter(|r| r.outputs.get(model).is_some_and(|o| o.matches(&r.label)))
            .count();
        correct as f64 / self.records.len() as f64
    }

    /// Fraction of records where at least one family member is correct.
    pub fn joint_oracle_accuracy(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let correct = self
            .records
            .iter()
            .filter(|r| {
                self.models
                    .iter()
                    .any(|m| r.outputs.get(m).is_some_and(|o| o.matches(&r.label)))
            })
            .count();
        correct as f64 / self.records.len() as f64
    }

    /// Validate record shapes against the declared task.
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.models.is_empty() {
            return Err(Error::Invariant("trace declares no models".into()));
        }
        let mut class_count: Option<usize> = None;
        let mut vocab_size: Option<usize> = None;
        for rec in &self.records {
            for m in &self.models {
                let out = rec.outputs.get(m).ok_or_else(|| {
                    Error::MissingModel(format!(
                        "record {} lacks output for model {m}",
                        rec.request_id
                    ))
                })?;
                if !out.all_finite() {
                    return Err(Error::Shape(format!(
                        "record {} model {m}: non-finite logit",
                        rec.request_id
                    )));
                }
                match (self.task, out, &rec.label) {
                    (TaskKind::Classification, RawOutput::Logits { logits }, Label::Class { class }) => {
                        let k = *class_count.get_or_insert(logits.len());
                        if logits.len() != k {
                            return Err(Error::Shape(format!(
                                "record {}: logits length {} != {}",
                                rec.request_id,
                                logits.len(),
                                k
                            )));
                        }
                        if logits.len() < 2 || *class >= logits.len() {
                            return Err(Error::Shape(format!(
                                "record {}: class {} out of range for {} logits",
                                rec.request_id,
                                class,
                                logits.len()
                            )));
                        }
                    }
                    (TaskKind::Generation { top_k }, RawOutput::Steps { steps }, Label::Tokens { tokens }) => {
                        if steps.is_empty() {
                            return Err(Error::Shape(format!(
                                "record {}: generation output has zero steps",
                                rec.request_id
                            )));
                        }
                        if steps.len() != tokens.len() {
                            return Err(Error::Shape(format!(
                                "record {}: {} steps vs {} label tokens",
                                rec.request_id,
                                steps.len(),
                                tokens.len()
                            )));
                        }
                        for step in steps {
                            let v = *vocab_size.get_or_insert(step.len());
                            if step.len() != v {
                                return Err(Error::Shape(format!(
                                    "record {}: vocab length {} != {}",
                                    rec.request_id,
                                    step.len(),
                                    v
                                )));
                            }
                            if step.len() < top_k {
                                return Err(Error::Shape(format!(
                                    "record {}: vocab {} smaller than top_k {}",
                                    rec.request_id,
                                    step.len(),
                                    top_k
                                )));
                            }
                        }
                        if tokens.iter().any(|t| *t >= steps[0].len()) {
                            return Err(Error::Shape(format!(
                                "record {}: label token out of vocab range",
                                rec.request_id
                            )));
                        }
                    }
                    (
                        TaskKind::QuestionAnswering,
                        RawOutput::SpanLogits {
                            start_logits,
                            end_logits,
                        },
                        Label::Span { start, end },
                    ) => {
                        if start_logits.len() != end_logits.len() || start_logits.len() < 2 {
                            return Err(Error::Shape(format!(
                                "record {}: span logits {} vs {}",
                                rec.request_id,
                                start_logits.len(),
                                end_logits.len()
                            )));
                        }
                        if *start >= start_logits.len() || *end >= end_logits.len() {
                            return Err(Error::Shape(format!(
                                "record {}: span label out of range",
                                rec.request_id
                            )));
                        }
                    }
                    _ => {
                        return Err(Error::Shape(format!(
                            "record {}: output/label shape does not match task",
                            rec.request_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Cost/accuracy/resource descriptors for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_id: ModelId,
    pub param_count: u64,
    /// Standalone accuracy fraction in [0,1] (reference value; routing uses
    /// trace-measured accuracies).
    pub standalone_accuracy: f64,
    /// Joules spent by one inference request.
    pub energy_per_request: f64,
    /// Seconds of service time for a single-request batch.
    pub service_latency: f64,
    /// Bytes of weights held resident.
    pub memory_bytes: f64,
    /// Kernel-utilization fraction as an affine map of batch size.
    pub utilization_coeffs: AffineCoeffs,
    /// Output transfer seconds as an affine map of batch size.
    pub transmission_coeffs: AffineCoeffs,
    /// Bytes of one prediction forwarded between models.
    pub output_bytes: f64,
    /// Optional activation-memory growth per batch element (bytes/request).
    #[serde(default)]
    pub memory_slope: f64,
    /// Optional service-latency growth per batch element (seconds/request).
    #[serde(default)]
    pub latency_slope: f64,
}

/// `y = slope * batch + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineCoeffs {
    pub slope: f64,
    pub intercept: f64,
}

impl AffineCoeffs {
    pub fn eval(&self, batch: f64) -> f64 {
        self.slope * batch + self.intercept
    }
}

impl ModelProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.energy_per_request > 0.0) {
            return Err(Error::Invariant(format!(
                "{}: energy_per_request must be > 0",
                self.model_id
            )));
        }
        if !(self.service_latency > 0.0) {
            return Err(Error::Invariant(format!(
                "{}: service_latency must be > 0",
                self.model_id
            )));
        }
        if !(self.memory_bytes > 0.0) {
            return Err(Error::Invariant(format!(
                "{}: memory_bytes must be > 0",
                self.model_id
            )));
        }
        if !(0.0..=1.0).contains(&self.standalone_accuracy) {
            return Err(Error::Invariant(format!(
                "{}: standalone_accuracy must be in [0,1]",
                self.model_id
            )));
        }
        if self.output_bytes < 0.0 || self.memory_slope < 0.0 || self.latency_slope < 0.0 {
            return Err(Error::Invariant(format!(
                "{}: byte and slope fields must be nonnegative",
                self.model_id
            )));
        }
        Ok(())
    }

    /// Service latency of a batch of `b` requests.
    pub fn latency_at(&self, b: f64) -> f64 {
        self.service_latency + self.latency_slope * (b - 1.0).max(0.0)
    }
}

/// One GPU in the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuSpec {
    pub gpu_id: String,
    pub memory_bytes: f64,
    pub idle_power_watts: f64,
    pub active_power_watts: f64,
}

/// Cluster description: GPUs plus the pairwise transfer-cost matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub schema_version: u32,
    pub gpus: Vec<GpuSpec>,
    /// Seconds per byte between GPU pairs; the diagonal is the intra-GPU cost.
    pub transmission_secs_per_byte: Vec<Vec<f64>>,
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        let g = self.gpus.len();
        if g == 0 {
            return Err(Error::Invariant("cluster has no GPUs".into()));
        }
        for gpu in &self.gpus {
            if !(gpu.memory_bytes > 0.0) {
                return Err(Error::Invariant(format!(
                    "gpu {}: memory must be > 0",
                    gpu.gpu_id
                )));
            }
            if gpu.idle_power_watts < 0.0 || gpu.active_power_watts < gpu.idle_power_watts {
                return Err(Error::Invariant(format!(
                    "gpu {}: need 0 <= idle_power <= active_power",
                    gpu.gpu_id
                )));
            }
        }
        let t = &self.transmission_secs_per_byte;
        if t.len() != g || t.iter().any(|row| row.len() != g) {
            return Err(Error::Shape(format!(
                "transmission matrix must be {g}x{g}"
            )));
        }
        for i in 0..g {
            for j in 0..g {
                if !(t[i][j] >= 0.0) {
                    return Err(Error::Invariant(
                        "transmission costs must be nonnegative".into(),
                    ));
                }
                if t[i][j] != t[j][i] {
                    return Err(Error::Invariant(format!(
                        "transmission matrix asymmetric at ({i},{j})"
                    )));
                }
            }
            for j in 0..g {
                if j != i && t[i][i] > t[i][j] {
                    return Err(Error::Invariant(format!(
                        "intra-GPU cost exceeds inter-GPU cost at ({i},{j})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn total_memory(&self) -> f64 {
        self.gpus.iter().map(|g| g.memory_bytes).sum()
    }
}

/// Wrapper schema for the profile file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileFile {
    pub schema_version: u32,
    pub profiles: Vec<ModelProfile>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Serialize any artifact as pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Load and validate a trace file.
pub fn load_trace(path: &Path, task: TaskKind) -> Result<TraceBundle> {
    let bundle: TraceBundle = read_json(path)?;
    if bundle.task != task {
        return Err(Error::Parse(format!(
            "trace {} declares task {:?}, expected {:?}",
            path.display(),
            bundle.task,
            task
        )));
    }
    bundle.validate()?;
    Ok(bundle)
}

/// Load a trace file using its self-declared task kind.
pub fn load_trace_auto(path: &Path) -> Result<TraceBundle> {
    let bundle: TraceBundle = read_json(path)?;
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_trace(path: &Path, bundle: &TraceBundle) -> Result<()> {
    std::fs::write(path, to_json_bytes(bundle)?)?;
    Ok(())
}

/// Load model profiles, enforcing the small-to-large family order.
pub fn load_profiles(path: &Path) -> Result<Vec<ModelProfile>> {
    let file: ProfileFile = read_json(path)?;
    validate_profiles(&file.profiles)?;
    Ok(file.profiles)
}

pub fn validate_profiles(profiles: &[ModelProfile]) -> Result<()> {
    if profiles.is_empty() {
        return Err(Error::EmptyInput("profile file lists no models".into()));
    }
    for p in profiles {
        p.validate()?;
    }
    for pair in profiles.windows(2) {
        if pair[0].param_count > pair[1].param_count {
            return Err(Error::Invariant(format!(
                "profiles must be ordered by nondecreasing param_count ({} > {})",
                pair[0].model_id, pair[1].model_id
            )));
        }
    }
    Ok(())
}

pub fn save_profiles(path: &Path, profiles: &[ModelProfile]) -> Result<()> {
    let file = ProfileFile {
        schema_version: SCHEMA_VERSION,
        profiles: profiles.to_vec(),
    };
    std::fs::write(path, to_json_bytes(&file)?)?;
    Ok(())
}

/// Load and validate a cluster file.
pub fn load_cluster(path: &Path) -> Result<ClusterSpec> {
    let cluster: ClusterSpec = read_json(path)?;
    cluster.validate()?;
    Ok(cluster)
}

pub fn save_cluster(path: &Path, cluster: &ClusterSpec) -> Result<()> {
    std::fs::write(path, to_json_bytes(cluster)?)?;
    Ok(())
}
