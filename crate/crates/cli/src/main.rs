//! `cascade` — plan and simulate confidence-routed model cascades.
//!
//! Subcommands mirror the pipeline stages: gen-trace, calibrate, search,
//! skip, plan, simulate, report, and pipeline (all of them in order).
//! Every stage writes its artifacts plus a reproducibility manifest into
//! the output directory; exit codes distinguish missing inputs (2),
//! infeasible plans (3), and invariant violations (4).

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cascade_core::error::Result;
use cascade_core::planner::{ObjectiveDirection, PlanParams};
use cascade_core::sim::{ArrivalProcess, SimConfig, Workload};
use cascade_core::skip::OperatingMode;
use cascade_core::threshold::SearchParams;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Ap,
    Eo,
}

impl From<ModeArg> for OperatingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ap => OperatingMode::AccuracyPreserving,
            ModeArg::Eo => OperatingMode::EnergyOptimizing,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Min,
    Max,
}

impl From<ObjectiveArg> for ObjectiveDirection {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Min => ObjectiveDirection::Minimize,
            ObjectiveArg::Max => ObjectiveDirection::Maximize,
        }
    }
}

#[derive(Parser)]
#[command(name = "cascade", version, about = "Cascade serving planner and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct SearchFlags {
    /// Samples per search round.
    #[arg(long, default_value_t = 256)]
    samples: usize,
    /// Refinement half-width around in-band samples.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 50)]
    max_rounds: usize,
    /// Router overhead per visited model, seconds.
    #[arg(long, default_value_t = 1e-3)]
    hop_overhead: f64,
}

impl SearchFlags {
    fn params(&self, seed: u64) -> SearchParams {
        SearchParams {
            samples_per_round: self.samples,
            epsilon: self.epsilon,
            max_rounds: self.max_rounds,
            seed,
            ..SearchParams::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a prediction trace from a joint-accuracy spec.
    GenTrace {
        /// Joint-accuracy spec file.
        #[arg(long)]
        spec: PathBuf,
        /// Number of records.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit per-model confidence temperatures on a trace.
    Calibrate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the threshold performance graph; select AP/EO points.
    Search {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        search: SearchFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prune non-paying stages and assign skip bands.
    Skip {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Ap)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        search: SearchFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Place the skip-plan cascade on a cluster.
    Plan {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        skip_plan: PathBuf,
        #[arg(long)]
        cluster: PathBuf,
        /// Batch size the dataflow is provisioned for.
        #[arg(long, default_value_t = 8.0)]
        batch: f64,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::Min)]
        objective: ObjectiveArg,
        /// Intra-GPU channel discount (zero-copy knob; 1 = off).
        #[arg(long, default_value_t = 1.0)]
        discount: f64,
        #[arg(long, default_value_t = 4)]
        max_partitions: usize,
        #[arg(long, default_value_t = 2)]
        scale_steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        hop_overhead: f64,
        /// Plan a giant-only baseline instead of the cascade.
        #[arg(long)]
        giant_only: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a placed cascade under a Poisson workload.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        skip_plan: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        cluster: PathBuf,
        /// Poisson arrival rate, requests per second.
        #[arg(long)]
        rate: f64,
        /// Simulated horizon, seconds.
        #[arg(long)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        max_batch: usize,
        #[arg(long, default_value_t = 0.010)]
        max_wait: f64,
        #[arg(long, default_value_t = 1e-3)]
        hop_overhead: f64,
        #[arg(long, default_value_t = 0.1)]
        meter_period: f64,
        /// Simulate the giant-only baseline on this plan.
        #[arg(long)]
        giant_only: bool,
        /// Prefix for the report files.
        #[arg(long, default_value = "cascade")]
        label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare simulation reports side by side.
    Report {
        /// Report files to compare (first is the baseline).
        #[arg(long, required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Labels, one per report.
        #[arg(long, num_args = 2.., value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage from one config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenTrace { spec, n, seed, out } => {
            let path = stages::gen_trace(&spec, n, seed, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Calibrate { trace, out } => {
            let path = stages::calibrate(&trace, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Search {
            trace,
            profiles,
            calibration,
            seed,
            search,
            out,
        } => {
            let artifacts = stages::search_stage(
                &trace,
                &profiles,
                &calibration,
                &search.params(seed),
                search.hop_overhead,
                &out,
            )?;
            println!("wrote {}", artifacts.graph_csv.display());
            println!("wrote {}", artifacts.selected_json.display());
        }
        Command::Skip {
            trace,
            profiles,
            calibration,
            mode,
            seed,
            search,
            out,
        } => {
            let path = stages::skip_stage(
                &trace,
                &profiles,
                &calibration,
                mode.into(),
                &search.params(seed),
                search.hop_overhead,
                &out,
            )?;
            println!("wrote {}", path.display());
        }
        Command::Plan {
            trace,
            profiles,
            calibration,
            skip_plan,
            cluster,
            batch,
            objective,
            discount,
            max_partitions,
            scale_steps,
            hop_overhead,
            giant_only,
            out,
        } => {
            let params = PlanParams {
                batch_size: batch,
                max_partitions,
                max_scale_steps: scale_steps,
                objective: objective.into(),
                intra_gpu_discount: discount,
            };
            let path = stages::plan_stage(
                &trace,
                &profiles,
                &calibration,
                &skip_plan,
                &cluster,
                &params,
                hop_overhead,
                giant_only,
                &out,
            )?;
            println!("wrote {}", path.display());
        }
        Command::Simulate {
            trace,
            profiles,
            calibration,
            skip_plan,
            plan,
            cluster,
            rate,
            duration,
            seed,
            max_batch,
            max_wait,
            hop_overhead,
            meter_period,
            giant_only,
            label,
            out,
        } => {
            let workload = Workload {
                arrivals: ArrivalProcess::Poisson { rate },
                duration,
                seed,
            };
            let sim = SimConfig {
                max_batch,
                max_wait,
                hop_overhead,
                meter_period,
            };
            let path = stages::simulate_stage(
                &trace,
                &profiles,
                &calibration,
                &skip_plan,
                &plan,
                &cluster,
                &workload,
                &sim,
                giant_only,
                &label,
                &out,
            )?;
            println!("wrote {}", path.display());
        }
        Command::Report {
            reports,
            labels,
            out,
        } => {
            let labeled: Vec<(String, PathBuf)> = reports
                .into_iter()
                .enumerate()
                .map(|(i, p)| {
                    let label = labels
                        .get(i)
                        .cloned()
                        .unwrap_or_else(|| format!("report{i}"));
                    (label, p)
                })
                .collect();
            let path = stages::report_stage(&labeled, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Pipeline {
            config,
            seed,
            mode,
            out,
        } => {
            let mut run_config = config::RunConfig::load(&config)?;
            if let Some(seed) = seed {
                run_config.seed = seed;
            }
            if let Some(mode) = mode {
                run_config.mode = mode.into();
            }
            stages::pipeline(&run_config, &out)?;
            println!("pipeline complete: {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
