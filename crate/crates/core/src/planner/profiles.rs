//! Batch-size profile fitting.
//!
//! Each model's kernel utilization, output transfer time, active memory,
//! and service latency are affine in batch size. Maps are either fitted
//! from measured `(batch, value)` samples by least squares or taken
//! directly from the coefficients in the profile file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{ModelId, ModelProfile};

/// Transfer-time profiles are measured against a 1 GB/s reference
/// channel; dividing by this constant converts fitted seconds back into
/// bytes for placement-dependent costing.
pub const REFERENCE_CHANNEL_SECS_PER_BYTE: f64 = 1e-9;

/// One profiling measurement at a given batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub batch: f64,
    /// Kernel utilization fraction observed.
    pub utilization: f64,
    /// Seconds to move the output over the reference channel.
    pub transfer_secs: f64,
    /// Active memory in bytes.
    pub memory_bytes: f64,
    /// Batch service seconds.
    pub latency_secs: f64,
}

/// Wrapper schema for a profile-samples file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileSamplesFile {
    pub schema_version: u32,
    pub samples: BTreeMap<ModelId, Vec<ProfileSample>>,
}

pub fn load_profile_samples(path: &Path) -> Result<BTreeMap<ModelId, Vec<ProfileSample>>> {
    let text = std::fs::read_to_string(path)?;
    let file: ProfileSamplesFile = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(file.samples)
}

/// A least-squares affine fit with its residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedLine {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit over its samples.
    pub rms_residual: f64,
}

impl FittedLine {
    pub fn eval(&self, b: f64) -> f64 {
        self.slope * b + self.intercept
    }

    fn exact(slope: f64, intercept: f64) -> Self {
        FittedLine {
            slope,
            intercept,
            rms_residual: 0.0,
        }
    }
}

/// Fitted maps for one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelProfileMap {
    pub model_id: ModelId,
    pub utilization: FittedLine,
    pub transfer: FittedLine,
    pub memory: FittedLine,
    pub latency: FittedLine,
    /// Batch range covered by the samples.
    pub batch_range: (f64, f64),
    /// Set when the fitted utilization exceeded 1 inside the range and
    /// evaluation will clamp.
    pub utilization_clamped: bool,
}

impl ModelProfileMap {
    /// Kernel utilization at batch `b`, clamped to [0,1].
    pub fn utilization_at(&self, b: f64) -> f64 {
        self.utilization.eval(b).clamp(0.0, 1.0)
    }

    /// Output bytes per batch recovered from the transfer-time fit.
    pub fn transfer_bytes_at(&self, b: f64) -> f64 {
        (self.transfer.eval(b) / REFERENCE_CHANNEL_SECS_PER_BYTE).max(0.0)
    }

    pub fn memory_at(&self, b: f64) -> f64 {
        self.memory.eval(b).max(0.0)
    }

    pub fn latency_at(&self, b: f64) -> f64 {
        self.latency.eval(b).max(0.0)
    }
}

/// Fitted maps for a family, keyed by model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileMap {
    pub models: Vec<ModelProfileMap>,
}

impl ProfileMap {
    pub fn get(&self, model: &ModelId) -> Result<&ModelProfileMap> {
        self.models
            .iter()
            .find(|m| &m.model_id == model)
            .ok_or_else(|| Error::MissingModel(format!("no profile map for {model}")))
    }

    /// Exact maps straight from profile coefficients, covering batches
    /// `[1, max_batch]`.
    pub fn from_coeffs(profiles: &[ModelProfile], max_batch: f64) -> Self {
        let models = profiles
            .iter()
            .map(|p| {
                let latency = FittedLine::exact(
                    p.latency_slope,
                    p.service_latency - p.latency_slope,
                );
                let u = FittedLine::exact(
                    p.utilization_coeffs.slope,
                    p.utilization_coeffs.intercept,
                );
                let clamped = u.eval(1.0) > 1.0 || u.eval(max_batch) > 1.0;
                ModelProfileMap {
                    model_id: p.model_id.clone(),
                    utilization: u,
                    transfer: FittedLine::exact(
                        p.transmission_coeffs.slope,
                        p.transmission_coeffs.intercept,
                    ),
                    memory: FittedLine::exact(p.memory_slope, p.memory_bytes),
                    latency,
                    batch_range: (1.0, max_batch),
                    utilization_clamped: clamped,
                }
            })
            .collect();
        ProfileMap { models }
    }
}

/// Least-squares fit of all four maps from per-model samples.
pub fn fit_profiles(samples: &BTreeMap<ModelId, Vec<ProfileSample>>) -> Result<ProfileMap> {
    let mut models = Vec::with_capacity(samples.len());
    for (model, points) in samples {
        let batches: Vec<f64> = points.iter().map(|s| s.batch).collect();
        let mut distinct = batches.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite batch"));
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::Invariant(format!(
                "{model}: need >= 2 distinct batch sizes, got {}",
                distinct.len()
            )));
        }
        let lo = distinct[0];
        let hi = *distinct.last().expect("nonempty");

        let fit = |extract: fn(&ProfileSample) -> f64| -> Result<FittedLine> {
            least_squares(&batches, &points.iter().map(extract).collect::<Vec<_>>())
        };
        let utilization = fit(|s| s.utilization)?;
        let clamped = utilization.eval(lo) > 1.0 || utilization.eval(hi) > 1.0;
        models.push(ModelProfileMap {
            model_id: model.clone(),
            utilization,
            transfer: fit(|s| s.transfer_secs)?,
            memory: fit(|s| s.memory_bytes)?,
            latency: fit(|s| s.latency_secs)?,
            batch_range: (lo, hi),
            utilization_clamped: clamped,
        });
    }
    Ok(ProfileMap { models })
}

/// Standard normal-equations least squares for `y = a*x + b`.
fn least_squares(x: &[f64], y: &[f64]) -> Result<FittedLine> {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(Error::Invariant(
            "degenerate least-squares system: all batch sizes equal".into(),
        ));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    Ok(FittedLine {
        slope,
        intercept,
        rms_residual: (rss / n).sqrt(),
    })
}
