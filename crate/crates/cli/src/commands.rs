//! Implementation of the subcommands: input loading, the core pipeline and
//! output rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use sgd_dag::dag::{self, BuildOptions};
use sgd_dag::gantt;
use sgd_dag::pipeline::{self, IoSource, PipelineError, ProfileBuild};
use sgd_dag::sim::{self, SimError};
use sgd_dag::trace::{self, TraceError, TraceSet};
use sgd_dag::{ClusterSpec, CommTrigger, DagError, IterationProfile, OverlapMode, Strategy, WorkloadSpec};

use crate::{FormatArg, IoSourceArg, RunArgs, StrategyArg, TriggerArg, ValidateArgs};

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid input; exit status 1.
    Input(String),
    /// The model contradicted itself; exit status 2.
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Invariant(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(message) | CliError::Invariant(message) => f.write_str(message),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(error: PipelineError) -> Self {
        let internal = error.is_invariant()
            || matches!(
                error,
                PipelineError::Sim(
                    SimError::CycleDetected(_) | SimError::UnmappedResource { .. } | SimError::MismatchedProvenance { .. }
                )
            );
        if internal {
            CliError::Invariant(error.to_string())
        } else {
            CliError::Input(error.to_string())
        }
    }
}

impl From<SimError> for CliError {
    fn from(error: SimError) -> Self {
        PipelineError::from(error).into()
    }
}

impl From<DagError> for CliError {
    fn from(error: DagError) -> Self {
        CliError::Input(error.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut text = String::new();
        io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| CliError::Input(format!("cannot read standard input: {e}")))?;
        return Ok(text);
    }
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_trace(path: &Path) -> std::result::Result<TraceSet, (String, TraceError)> {
    let text = read_text(path).map_err(|e| (e.to_string(), TraceError::Io(e.to_string())))?;
    trace::parse_trace(&text).map_err(|e| (format!("{}: {e}", path.display()), e))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Input(format!("cannot write standard output: {e}"))),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    text
}

pub fn strategy_of(mode: StrategyArg, trigger: Option<TriggerArg>) -> Result<Strategy> {
    let mode = match mode {
        StrategyArg::Naive => OverlapMode::Naive,
        StrategyArg::IoOverlap => OverlapMode::IoOverlap,
        StrategyArg::Wfbp => OverlapMode::WfbpOverlap,
        StrategyArg::IoWfbp => OverlapMode::IoAndWfbpOverlap,
    };
    match trigger {
        None => Ok(Strategy::from_mode(mode)),
        Some(trigger) => {
            let trigger = match trigger {
                TriggerArg::PerLayer => CommTrigger::AfterLayerBackward,
                TriggerArg::AfterAll => CommTrigger::AfterAllBackward,
            };
            Strategy::new(mode, trigger).map_err(|e| CliError::Input(e.to_string()))
        }
    }
}

/// Everything a run needs, loaded and validated.
struct Setup {
    workload: WorkloadSpec,
    cluster: ClusterSpec,
    strategy: Strategy,
    build: ProfileBuild,
}

impl Setup {
    fn load(args: &RunArgs) -> Result<Self> {
        let workload: WorkloadSpec = load_json(&args.workload)?;
        let workload = workload.validate().map_err(|e| CliError::Input(format!("{}: {e}", args.workload.display())))?;
        let cluster: ClusterSpec = load_json(&args.cluster)?;
        let mut cluster = cluster.validate().map_err(|e| CliError::Input(format!("{}: {e}", args.cluster.display())))?;
        if let Some(gpus) = args.gpus {
            cluster = cluster.with_total_gpus(gpus).map_err(|e| CliError::Input(format!("--gpus {gpus}: {e}")))?;
        }
        let strategy = strategy_of(args.strategy, args.comm_trigger)?;
        if args.iterations == 0 {
            return Err(CliError::Input("--iterations must be at least 1".into()));
        }
        let traces = load_trace(&args.trace).map_err(|(message, _)| CliError::Input(message))?;
        let source = match args.io_source {
            IoSourceArg::Trace => IoSource::Trace,
            IoSourceArg::Bandwidth => IoSource::Bandwidth,
        };
        let build = pipeline::profile_from_trace(&traces, args.warmup, &workload, &cluster, source)
            .map_err(|e| CliError::Input(format!("{}: {e}", args.trace.display())))?;
        Ok(Setup { workload, cluster, strategy, build })
    }

    fn profile(&self) -> &IterationProfile {
        &self.build.profile
    }

    fn options(&self, k: usize) -> BuildOptions {
        BuildOptions::for_strategy(self.strategy, k)
    }
}

fn unsupported(command: &str, format: FormatArg) -> CliError {
    let name = match format {
        FormatArg::Json => "json",
        FormatArg::Csv => "csv",
        FormatArg::Svg => "svg",
        FormatArg::Dot => "dot",
    };
    CliError::Input(format!("{command} does not support --format {name}"))
}

#[derive(Debug, Clone, Copy, Deserialize)]
struct MeasuredPoint {
    gpus: usize,
    iter_time_us: f64,
}

fn load_measured(path: Option<&Path>) -> Result<BTreeMap<usize, f64>> {
    let Some(path) = path else { return Ok(BTreeMap::new()) };
    let points: Vec<MeasuredPoint> = load_json(path)?;
    let mut measured = BTreeMap::new();
    for point in points {
        if !(point.iter_time_us > 0.0) {
            return Err(CliError::Input(format!(
                "{}: measured time for {} GPUs must be positive",
                path.display(),
                point.gpus
            )));
        }
        if measured.insert(point.gpus, point.iter_time_us).is_some() {
            return Err(CliError::Input(format!("{}: duplicate entry for {} GPUs", path.display(), point.gpus)));
        }
    }
    Ok(measured)
}

pub fn predict(args: &RunArgs) -> Result<()> {
    let format = args.format.unwrap_or(FormatArg::Json);
    if format != FormatArg::Json {
        return Err(unsupported("predict", format));
    }
    let setup = Setup::load(args)?;
    let measured = load_measured(args.measured.as_deref())?;
    let mut report = pipeline::predict(
        &setup.workload,
        &setup.cluster,
        setup.profile(),
        setup.strategy,
        args.iterations,
        measured.get(&setup.cluster.total_gpus).copied(),
    )?;
    report.io_source = Some(setup.build.io_source);
    let mut value = serde_json::to_value(&report).expect("reports serialize");
    let mut notes = Vec::new();
    if report.analytic.update_time_excluded_us > 0.0 {
        notes.push(format!(
            "the overlap formulas leave out the update time; simulated times include {} us of update per iteration",
            gantt::format_us(report.analytic.update_time_excluded_us)
        ));
    }
    if args.io_source == IoSourceArg::Trace && setup.build.io_source == IoSource::Bandwidth {
        notes.push("the trace has no data layer; the I/O time was derived from the disk bandwidth".into());
    }
    if !notes.is_empty() {
        value["notes"] = json!(notes);
    }
    write_output(args.out.as_deref(), &to_json(&value))
}

pub fn simulate(args: &RunArgs) -> Result<()> {
    let format = args.format.unwrap_or(FormatArg::Json);
    let setup = Setup::load(args)?;
    let result = sim::run(&setup.workload, &setup.cluster, setup.profile(), &setup.options(args.iterations))?;
    let text = match format {
        FormatArg::Json => {
            let exposed = sim::nonoverlapped_comm(&result, setup.profile())?;
            to_json(&json!({
                "gpus": setup.cluster.total_gpus,
                "machines": setup.cluster.machines,
                "strategy": setup.strategy,
                "iterations": args.iterations,
                "io_source": setup.build.io_source,
                "makespan_us": result.makespan,
                "avg_iteration_time_us": result.avg_iteration_time,
                "iteration_finish_us": result.iteration_finish,
                "nonoverlapped_comm_us": exposed,
                "comm_efficiency": result.comm_efficiency,
                "per_resource_busy_us": result.per_resource_busy,
            }))
        }
        FormatArg::Csv => gantt::gantt_export(&result),
        other => return Err(unsupported("simulate", other)),
    };
    write_output(args.out.as_deref(), &text)
}

/// Powers of two up to the cluster size, plus the cluster size, keeping
/// the counts the cluster can be laid out with.
fn default_counts(cluster: &ClusterSpec) -> Vec<usize> {
    let total = cluster.total_gpus;
    let mut counts: Vec<usize> = std::iter::successors(Some(1usize), |n| n.checked_mul(2)).take_while(|&n| n < total).collect();
    counts.push(total);
    counts.retain(|&n| cluster.with_total_gpus(n).is_ok());
    counts
}

pub fn speedup(args: &RunArgs, counts: &[usize]) -> Result<()> {
    let format = args.format.unwrap_or(FormatArg::Json);
    if !matches!(format, FormatArg::Json | FormatArg::Csv) {
        return Err(unsupported("speedup", format));
    }
    let setup = Setup::load(args)?;
    let counts = if counts.is_empty() { default_counts(&setup.cluster) } else { counts.to_vec() };
    let rows = pipeline::speedup_curve(&setup.workload, &setup.cluster, setup.profile(), setup.strategy, &counts, args.iterations)?;
    let measured = load_measured(args.measured.as_deref())?;
    let text = match format {
        FormatArg::Csv => pipeline::speedup_csv(&rows),
        _ => {
            let rows: Vec<Value> = rows
                .iter()
                .map(|row| {
                    let mut value = serde_json::to_value(row).expect("rows serialize");
                    if let Some(&t) = measured.get(&row.gpus) {
                        value["measured_iter_time_us"] = json!(t);
                        value["relative_error"] = json!((row.iter_time_us - t).abs() / t);
                    }
                    value
                })
                .collect();
            to_json(&json!({
                "strategy": setup.strategy,
                "gpus_per_machine": setup.cluster.gpus_per_machine,
                "iterations": args.iterations,
                "io_source": setup.build.io_source,
                "rows": rows,
            }))
        }
    };
    write_output(args.out.as_deref(), &text)
}

pub fn gantt(args: &RunArgs) -> Result<()> {
    let format = args.format.unwrap_or(FormatArg::Csv);
    if !matches!(format, FormatArg::Csv | FormatArg::Svg) {
        return Err(unsupported("gantt", format));
    }
    let setup = Setup::load(args)?;
    let result = sim::run(&setup.workload, &setup.cluster, setup.profile(), &setup.options(args.iterations))?;
    let text = match format {
        FormatArg::Svg => gantt::gantt_svg(&result),
        _ => gantt::gantt_export(&result),
    };
    write_output(args.out.as_deref(), &text)
}

pub fn dag(args: &RunArgs) -> Result<()> {
    let format = args.format.unwrap_or(FormatArg::Json);
    if !matches!(format, FormatArg::Json | FormatArg::Dot) {
        return Err(unsupported("dag", format));
    }
    let setup = Setup::load(args)?;
    let graph = dag::build_iteration_dag(&setup.workload, &setup.cluster, setup.profile(), &setup.options(args.iterations))?;
    let text = match format {
        FormatArg::Dot => dag::to_dot(&graph),
        _ => {
            let mut text = dag::to_json(&graph);
            text.push('\n');
            text
        }
    };
    write_output(args.out.as_deref(), &text)
}

pub fn validate(args: &ValidateArgs) -> Result<()> {
    let traces = match load_trace(&args.trace) {
        Ok(traces) => traces,
        Err((message, error)) => {
            let line = match &error {
                TraceError::MalformedRow { line, .. } | TraceError::InconsistentBlocks { line, .. } => Some(*line),
                _ => None,
            };
            let report = json!({
                "trace": args.trace.display().to_string(),
                "ok": false,
                "line": line,
                "error": error.to_string(),
            });
            write_output(args.out.as_deref(), &to_json(&report))?;
            return Err(CliError::Input(message));
        }
    };
    let profile = trace::average_unchecked(&traces, args.warmup)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.trace.display())))?;
    // Warnings do not fail validation, but a profile that violates the model
    // cannot be simulated; say so.
    let profile_error = profile.clone().validate().err().map(|e| e.to_string());
    let io_time = if trace::has_data_layer(&traces) { Some(profile.io_time) } else { None };
    let warnings: Vec<Value> = traces.warnings.iter().map(|w| json!({"line": w.line, "message": w.message})).collect();
    let mut report = json!({
        "trace": args.trace.display().to_string(),
        "ok": true,
        "iterations": traces.iterations.len(),
        "warmup": args.warmup,
        "layers": traces.layers(),
        "compute_layers": profile.layers(),
        "learnable_layers": profile.learnable_layers(),
        "parameter_bytes": traces.parameter_bytes(),
        "data_layer_io_time_us": io_time,
        "forward_total_us": profile.forward_total(),
        "backward_total_us": profile.backward_total(),
        "comm_total_us": profile.comm_total(),
        "warnings": warnings,
        "usable_profile": profile_error.is_none(),
    });
    if let Some(error) = profile_error {
        report["profile_error"] = json!(error);
    }
    write_output(args.out.as_deref(), &to_json(&report))
}
