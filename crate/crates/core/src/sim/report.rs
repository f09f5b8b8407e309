//! Simulation reports and plan comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::ModelId;

/// One energy-meter sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilSample {
    pub time: f64,
    pub gpu: usize,
    pub busy_fraction: f64,
}

/// Queueing behavior at one cascade stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelQueueStats {
    pub model: ModelId,
    /// Mean seconds between enqueue and batch dispatch.
    pub mean_queue_wait: Option<f64>,
    /// Mean seconds a batch spends in the partition chain.
    pub mean_batch_service: Option<f64>,
    pub mean_batch_size: Option<f64>,
}

/// Metrics of one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub duration: f64,
    pub arrived: u64,
    pub completed: u64,
    pub in_flight: u64,
    /// Completed requests per second.
    pub throughput: f64,
    pub mean_latency: Option<f64>,
    /// 99.9th percentile latency over completed requests.
    pub p999_latency: Option<f64>,
    /// Accumulated energy divided by arrived requests; absent when the
    /// window saw no arrivals.
    pub joules_per_request: Option<f64>,
    pub total_joules: f64,
    pub per_gpu_joules: Vec<f64>,
    pub per_gpu_busy_fraction: Vec<f64>,
    /// Fraction of arrived requests that executed on each cascade stage.
    pub reach_fraction: Vec<f64>,
    /// Time-averaged number of requests in the system.
    pub mean_in_system: f64,
    pub queue_stats: Vec<ModelQueueStats>,
    pub utilization_series: Vec<UtilSample>,
    /// Completed-latency histogram with 1 ms bins.
    pub latency_histogram_ms: Vec<u64>,
}

impl SimReport {
    /// Internal consistency checks run after every simulation.
    pub fn check(&self) -> Result<()> {
        if self.arrived != self.completed + self.in_flight {
            return Err(Error::Invariant(format!(
                "conservation broken: {} arrived, {} completed, {} in flight",
                self.arrived, self.completed, self.in_flight
            )));
        }
        let gpu_sum: f64 = self.per_gpu_joules.iter().sum();
        if (gpu_sum - self.total_joules).abs() > 1e-9 * self.total_joules.max(1.0) {
            return Err(Error::Invariant(
                "per-GPU joules do not sum to the total".into(),
            ));
        }
        if let (Some(mean), Some(p999)) = (self.mean_latency, self.p999_latency) {
            if p999 + 1e-12 < mean {
                return Err(Error::Invariant(format!(
                    "tail latency {p999} below mean {mean}"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, crate::trace::to_json_bytes(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Per-GPU utilization time series as CSV.
    pub fn utilization_csv(&self) -> String {
        let mut out = String::from("time_secs,gpu,busy_fraction\n");
        for s in &self.utilization_series {
            out.push_str(&format!("{},{},{}\n", s.time, s.gpu, s.busy_fraction));
        }
        out
    }

    /// Latency histogram (1 ms bins) as CSV.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_ms,count\n");
        for (bin, count) in self.latency_histogram_ms.iter().enumerate() {
            out.push_str(&format!("{bin},{count}\n"));
        }
        out
    }
}

/// One metric row of a plan comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub values: Vec<Option<f64>>,
    /// Each value divided by the first report's value.
    pub ratios: Vec<Option<f64>>,
}

/// Side-by-side comparison of simulation reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub labels: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Build the comparison table; the first report is the baseline.
pub fn compare_plans(reports: &[(String, &SimReport)]) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(Error::Invariant(
            "comparison needs at least two reports".into(),
        ));
    }
    let metric = |name: &str, get: &dyn Fn(&SimReport) -> Option<f64>| -> ComparisonRow {
        let values: Vec<Option<f64>> = reports.iter().map(|(_, r)| get(r)).collect();
        let base = values[0];
        let ratios = values
            .iter()
            .map(|v| match (v, base) {
                (Some(v), Some(b)) if b != 0.0 => Some(v / b),
                _ => None,
            })
            .collect();
        ComparisonRow {
            metric: name.to_string(),
            values,
            ratios,
        }
    };
    let rows = vec![
        metric("throughput_rps", &|r| Some(r.throughput)),
        metric("mean_latency_secs", &|r| r.mean_latency),
        metric("p999_latency_secs", &|r| r.p999_latency),
        metric("joules_per_request", &|r| r.joules_per_request),
        metric("total_joules", &|r| Some(r.total_joules)),
        metric("completed", &|r| Some(r.completed as f64)),
    ];
    Ok(ComparisonTable {
        labels: reports.iter().map(|(l, _)| l.clone()).collect(),
        rows,
    })
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for l in &self.labels {
            out.push_str(&format!(",{l},{l}_ratio"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.metric);
            for (v, r) in row.values.iter().zip(&row.ratios) {
                match v {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
                match r {
                    Some(r) => out.push_str(&format!(",{r}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}
