//! Stage implementations shared by the subcommands and `pipeline`.
//!
//! Every stage reads files, writes one or more artifacts into the output
//! directory, and drops a manifest (tool version, seed, input hashes,
//! resolved parameters) next to each artifact.

use std::path::{Path, PathBuf};

use serde::Serialize;

use cascade_core::calibration::{calibrate_family, CalibrationTable};
use cascade_core::cascade::{evaluate_scored, CascadeConfig, CascadeCosts, ScoredTrace};
use cascade_core::error::{Error, Result};
use cascade_core::manifest::write_manifest;
use cascade_core::planner::{
    plan_search, DeploymentPlan, PlanParams, ProfileMap, TrafficStats,
};
use cascade_core::sim::{run, ArrivalProcess, SimConfig, SimReport, Workload};
use cascade_core::skip::{prune_and_rewire, OperatingMode, SkipPlan};
use cascade_core::threshold::{search_scored, select_ap, select_eo, SearchParams, SelectedPoint};
use cascade_core::trace::{
    generate_synthetic_trace, load_cluster, load_profiles, load_trace_auto, save_trace,
    to_json_bytes, JointAccuracySpec, ModelProfile, TraceBundle,
};

pub fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn write_artifact<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_bytes(value)?)?;
    Ok(())
}

/// gen-trace: synthesize a trace from a joint-accuracy spec.
pub fn gen_trace(spec_path: &Path, n: usize, seed: u64, out: &Path) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let text = std::fs::read_to_string(spec_path)?;
    let spec: JointAccuracySpec = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", spec_path.display())))?;
    let bundle = generate_synthetic_trace(&spec, n, seed)?;
    let path = out.join("trace.json");
    save_trace(&path, &bundle)?;
    write_manifest(
        &path,
        "gen-trace",
        Some(seed),
        &[spec_path],
        &serde_json::json!({ "n": n }),
    )?;
    Ok(path)
}

/// calibrate: fit one temperature per (model, task).
pub fn calibrate(trace_path: &Path, out: &Path) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let trace = load_trace_auto(trace_path)?;
    if trace.is_empty() {
        return Err(Error::EmptyInput("cannot calibrate an empty trace".into()));
    }
    let table = calibrate_family(&trace)?;
    let path = out.join("calibration.json");
    table.save(&path)?;
    write_manifest(
        &path,
        "calibrate",
        None,
        &[trace_path],
        &serde_json::json!({}),
    )?;
    Ok(path)
}

pub struct LoadedInputs {
    pub trace: TraceBundle,
    pub profiles: Vec<ModelProfile>,
    pub scored: ScoredTrace,
}

pub fn load_inputs(
    trace_path: &Path,
    profiles_path: &Path,
    calib_path: &Path,
) -> Result<LoadedInputs> {
    let trace = load_trace_auto(trace_path)?;
    let profiles = load_profiles(profiles_path)?;
    for m in &trace.models {
        if !profiles.iter().any(|p| &p.model_id == m) {
            return Err(Error::MissingModel(format!("no profile for trace model {m}")));
        }
    }
    let calib = CalibrationTable::load(calib_path)?;
    let scored = ScoredTrace::new(&trace, &calib)?;
    Ok(LoadedInputs {
        trace,
        profiles,
        scored,
    })
}

/// search: sample the threshold performance graph and select AP/EO points.
#[derive(Debug, Serialize)]
pub struct SearchArtifacts {
    pub graph_json: PathBuf,
    pub graph_csv: PathBuf,
    pub selected_json: PathBuf,
}

#[derive(Debug, Serialize)]
struct SelectedPoints {
    accuracy_target: f64,
    accuracy_floor: f64,
    ap: SelectedPoint,
    eo: Option<SelectedPoint>,
    eo_error: Option<String>,
}

pub fn search_stage(
    trace_path: &Path,
    profiles_path: &Path,
    calib_path: &Path,
    params: &SearchParams,
    hop_overhead: f64,
    out: &Path,
) -> Result<SearchArtifacts> {
    ensure_out_dir(out)?;
    let inputs = load_inputs(trace_path, profiles_path, calib_path)?;
    let costs = CascadeCosts::from_profiles(&inputs.trace.models, &inputs.profiles, hop_overhead)?;
    let graph = search_scored(&inputs.scored, &inputs.trace.models, &costs, params)?;

    let graph_json = out.join("graph.json");
    write_artifact(&graph_json, &graph)?;
    let graph_csv = out.join("graph.csv");
    std::fs::write(&graph_csv, graph.to_csv())?;

    let ap = select_ap(&graph, graph.accuracy_target)?;
    let (eo, eo_error) = match select_eo(&graph, graph.accuracy_floor) {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let selected_json = out.join("selected.json");
    write_artifact(
        &selected_json,
        &SelectedPoints {
            accuracy_target: graph.accuracy_target,
            accuracy_floor: graph.accuracy_floor,
            ap,
            eo,
            eo_error,
        },
    )?;

    let inputs_list = [trace_path, profiles_path, calib_path];
    for artifact in [&graph_json, &graph_csv, &selected_json] {
        write_manifest(artifact, "search", Some(params.seed), &inputs_list, params)?;
    }
    Ok(SearchArtifacts {
        graph_json,
        graph_csv,
        selected_json,
    })
}

/// skip: prune non-paying stages and assign skip bands.
pub fn skip_stage(
    trace_path: &Path,
    profiles_path: &Path,
    calib_path: &Path,
    mode: OperatingMode,
    params: &SearchParams,
    hop_overhead: f64,
    out: &Path,
) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let inputs = load_inputs(trace_path, profiles_path, calib_path)?;
    let plan = prune_and_rewire(
        &inputs.scored,
        &inputs.trace.models,
        &inputs.profiles,
        hop_overhead,
        params,
        mode,
    )?;
    let path = out.join("skip_plan.json");
    plan.save(&path)?;
    write_manifest(
        &path,
        "skip",
        Some(params.seed),
        &[trace_path, profiles_path, calib_path],
        &serde_json::json!({ "mode": mode, "search": params, "hop_overhead": hop_overhead }),
    )?;
    Ok(path)
}

/// Cascade traffic statistics measured on the validation trace.
pub fn measure_traffic(
    scored: &ScoredTrace,
    config: &CascadeConfig,
    profiles: &[ModelProfile],
    hop_overhead: f64,
) -> Result<(TrafficStats, Vec<f64>)> {
    let costs = CascadeCosts::from_profiles(&config.models, profiles, hop_overhead)?;
    let metrics = evaluate_scored(scored, config, &costs)?;
    Ok((
        TrafficStats {
            reach: metrics.reach_fraction,
            forward: metrics.forward_edges,
        },
        costs.latency,
    ))
}

/// plan: place the skip-plan cascade (or a giant-only baseline) on the
/// cluster.
#[allow(clippy::too_many_arguments)]
pub fn plan_stage(
    trace_path: &Path,
    profiles_path: &Path,
    calib_path: &Path,
    skip_plan_path: &Path,
    cluster_path: &Path,
    params: &PlanParams,
    hop_overhead: f64,
    giant_only: bool,
    out: &Path,
) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let inputs = load_inputs(trace_path, profiles_path, calib_path)?;
    let skip_plan = SkipPlan::load(skip_plan_path)?;
    let cluster = load_cluster(cluster_path)?;

    let config = if giant_only {
        giant_only_config(&skip_plan)?
    } else {
        skip_plan.to_config()?
    };
    let (traffic, latencies) =
        measure_traffic(&inputs.scored, &config, &inputs.profiles, hop_overhead)?;
    let map = ProfileMap::from_coeffs(&inputs.profiles, params.batch_size.max(16.0));
    let plan = plan_search(
        &config.models,
        &inputs.profiles,
        &map,
        &traffic,
        &latencies,
        &cluster,
        params,
    )?;
    let name = if giant_only {
        "baseline_plan.json"
    } else {
        "plan.json"
    };
    let path = out.join(name);
    plan.save(&path)?;
    write_manifest(
        &path,
        "plan",
        None,
        &[
            trace_path,
            profiles_path,
            calib_path,
            skip_plan_path,
            cluster_path,
        ],
        &serde_json::json!({ "planner": params, "giant_only": giant_only,
                             "hop_overhead": hop_overhead }),
    )?;
    Ok(path)
}

/// The single-model cascade serving everything with the largest model.
pub fn giant_only_config(skip_plan: &SkipPlan) -> Result<CascadeConfig> {
    let giant = skip_plan
        .retained
        .last()
        .ok_or_else(|| Error::Invariant("skip plan retains no models".into()))?;
    Ok(CascadeConfig {
        models: vec![giant.clone()],
        thresholds: vec![0.0],
        skip_bands: vec![Vec::new()],
    })
}

/// simulate: run the discrete-event simulation of a placed cascade.
#[allow(clippy::too_many_arguments)]
pub fn simulate_stage(
    trace_path: &Path,
    profiles_path: &Path,
    calib_path: &Path,
    skip_plan_path: &Path,
    plan_path: &Path,
    cluster_path: &Path,
    workload: &Workload,
    sim_config: &SimConfig,
    giant_only: bool,
    label: &str,
    out: &Path,
) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let inputs = load_inputs(trace_path, profiles_path, calib_path)?;
    let skip_plan = SkipPlan::load(skip_plan_path)?;
    let plan = DeploymentPlan::load(plan_path)?;
    let cluster = load_cluster(cluster_path)?;
    let config = if giant_only {
        giant_only_config(&skip_plan)?
    } else {
        skip_plan.to_config()?
    };
    let map = ProfileMap::from_coeffs(&inputs.profiles, sim_config.max_batch.max(16) as f64);
    let report = run(
        &plan,
        &config,
        &inputs.scored,
        &map,
        &inputs.profiles,
        &cluster,
        workload,
        sim_config,
    )?;

    let report_path = out.join(format!("{label}_report.json"));
    report.save(&report_path)?;
    std::fs::write(out.join(format!("{label}_util.csv")), report.utilization_csv())?;
    std::fs::write(
        out.join(format!("{label}_latency_hist.csv")),
        report.histogram_csv(),
    )?;
    write_manifest(
        &report_path,
        "simulate",
        Some(workload.seed),
        &[
            trace_path,
            profiles_path,
            calib_path,
            skip_plan_path,
            plan_path,
            cluster_path,
        ],
        &serde_json::json!({ "workload": workload, "sim": sim_config,
                             "giant_only": giant_only }),
    )?;
    Ok(report_path)
}

/// report: side-by-side comparison of simulation reports.
pub fn report_stage(reports: &[(String, PathBuf)], out: &Path) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let loaded: Vec<(String, SimReport)> = reports
        .iter()
        .map(|(label, path)| Ok((label.clone(), SimReport::load(path)?)))
        .collect::<Result<_>>()?;
    let refs: Vec<(String, &SimReport)> =
        loaded.iter().map(|(l, r)| (l.clone(), r)).collect();
    let table = cascade_core::sim::compare_plans(&refs)?;
    let json_path = out.join("comparison.json");
    write_artifact(&json_path, &table)?;
    std::fs::write(out.join("comparison.csv"), table.to_csv())?;
    let input_paths: Vec<&Path> = reports.iter().map(|(_, p)| p.as_path()).collect();
    write_manifest(
        &json_path,
        "report",
        None,
        &input_paths,
        &serde_json::json!({ "labels": reports.iter().map(|(l, _)| l).collect::<Vec<_>>() }),
    )?;
    Ok(json_path)
}

/// pipeline: chain every stage in order.
pub fn pipeline(config: &crate::config::RunConfig, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let trace_path = match (&config.family_spec, &config.trace) {
        (Some(spec), _) => gen_trace(spec, config.trace_n, config.seed, out)?,
        (None, Some(existing)) => existing.clone(),
        (None, None) => {
            return Err(Error::Invariant(
                "config needs either family_spec or trace".into(),
            ))
        }
    };
    let calib_path = calibrate(&trace_path, out)?;
    let search_params = SearchParams {
        seed: config.seed,
        ..config.search.clone()
    };
    search_stage(
        &trace_path,
        &config.profiles,
        &calib_path,
        &search_params,
        config.sim.hop_overhead,
        out,
    )?;
    let skip_path = skip_stage(
        &trace_path,
        &config.profiles,
        &calib_path,
        config.mode,
        &search_params,
        config.sim.hop_overhead,
        out,
    )?;
    let plan_path = plan_stage(
        &trace_path,
        &config.profiles,
        &calib_path,
        &skip_path,
        &config.cluster,
        &config.planner,
        config.sim.hop_overhead,
        false,
        out,
    )?;
    let baseline_plan_path = plan_stage(
        &trace_path,
        &config.profiles,
        &calib_path,
        &skip_path,
        &config.cluster,
        &config.planner,
        config.sim.hop_overhead,
        true,
        out,
    )?;
    let workload = Workload {
        arrivals: ArrivalProcess::Poisson {
            rate: config.workload.rate,
        },
        duration: config.workload.duration,
        seed: config.seed,
    };
    let cascade_report = simulate_stage(
        &trace_path,
        &config.profiles,
        &calib_path,
        &skip_path,
        &plan_path,
        &config.cluster,
        &workload,
        &config.sim,
        false,
        "cascade",
        out,
    )?;
    let baseline_report = simulate_stage(
        &trace_path,
        &config.profiles,
        &calib_path,
        &skip_path,
        &baseline_plan_path,
        &config.cluster,
        &workload,
        &config.sim,
        true,
        "giant_only",
        out,
    )?;
    report_stage(
        &[
            ("giant_only".to_string(), baseline_report),
            ("cascade".to_string(), cascade_report),
        ],
        out,
    )?;
    Ok(())
}
