//! Browser bindings: each export takes a JSON run configuration and returns
//! JSON or SVG text, so the page needs no bundler or framework.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use sgd_dag::gantt;
use sgd_dag::pipeline::{self, IoSource, PipelineError};
use sgd_dag::trace;
use sgd_dag::{ClusterSpec, CommTrigger, OverlapMode, Strategy, WorkloadSpec};

/// The AlexNet-on-K80 sample trace used when a configuration has none.
pub const SAMPLE_TRACE: &str = include_str!("../../../data/alexnet_k80.trace");
const SAMPLE_CLUSTER: &str = include_str!("../../../data/k80.json");
const SAMPLE_WORKLOAD: &str = include_str!("../../../data/alexnet.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    Naive,
    IoOverlap,
    Wfbp,
    #[default]
    IoWfbp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerName {
    PerLayer,
    AfterAll,
}

fn default_iterations() -> usize {
    3
}

/// One run of the demo. Missing fields fall back to the bundled sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub trace: Option<String>,
    pub cluster: ClusterSpec,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub strategy: StrategyName,
    #[serde(default)]
    pub comm_trigger: Option<TriggerName>,
    #[serde(default)]
    pub gpus: Option<usize>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub warmup: usize,
    #[serde(default)]
    pub io_source: IoSource,
    /// GPU counts of the speedup sweep.
    #[serde(default)]
    pub counts: Vec<usize>,
}

impl RunConfig {
    pub fn sample() -> Self {
        RunConfig {
            trace: None,
            cluster: serde_json::from_str::<ClusterSpec>(SAMPLE_CLUSTER)
                .ok()
                .and_then(|c| c.validate().ok())
                .expect("bundled cluster is valid"),
            workload: serde_json::from_str::<WorkloadSpec>(SAMPLE_WORKLOAD)
                .ok()
                .and_then(|w| w.validate().ok())
                .expect("bundled workload is valid"),
            strategy: StrategyName::default(),
            comm_trigger: None,
            gpus: None,
            iterations: default_iterations(),
            warmup: 0,
            io_source: IoSource::Trace,
            counts: vec![1, 2, 4, 8, 16],
        }
    }

    fn strategy(&self) -> Result<Strategy, String> {
        let mode = match self.strategy {
            StrategyName::Naive => OverlapMode::Naive,
            StrategyName::IoOverlap => OverlapMode::IoOverlap,
            StrategyName::Wfbp => OverlapMode::WfbpOverlap,
            StrategyName::IoWfbp => OverlapMode::IoAndWfbpOverlap,
        };
        match self.comm_trigger {
            None => Ok(Strategy::from_mode(mode)),
            Some(TriggerName::PerLayer) => Strategy::new(mode, CommTrigger::AfterLayerBackward).map_err(|e| e.to_string()),
            Some(TriggerName::AfterAll) => Strategy::new(mode, CommTrigger::AfterAllBackward).map_err(|e| e.to_string()),
        }
    }
}

/// Validated inputs of a run.
struct Prepared {
    workload: WorkloadSpec,
    cluster: ClusterSpec,
    strategy: Strategy,
    build: pipeline::ProfileBuild,
    config: RunConfig,
}

fn message(error: PipelineError) -> String {
    error.to_string()
}

fn prepare(config_json: &str) -> Result<Prepared, String> {
    let config: RunConfig = serde_json::from_str(config_json).map_err(|e| format!("configuration: {e}"))?;
    let workload = config.workload.clone().validate().map_err(|e| format!("workload: {e}"))?;
    let mut cluster = config.cluster.clone().validate().map_err(|e| format!("cluster: {e}"))?;
    if let Some(gpus) = config.gpus {
        cluster = cluster.with_total_gpus(gpus).map_err(|e| format!("gpus: {e}"))?;
    }
    let strategy = config.strategy()?;
    let text = config.trace.as_deref().unwrap_or(SAMPLE_TRACE);
    let traces = trace::parse_trace(text).map_err(|e| format!("trace: {e}"))?;
    let build = pipeline::profile_from_trace(&traces, config.warmup, &workload, &cluster, config.io_source)
        .map_err(|e| format!("trace: {e}"))?;
    Ok(Prepared { workload, cluster, strategy, build, config })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

/// The bundled sample configuration, as the page's starting point.
pub fn sample_config() -> String {
    let mut config = RunConfig::sample();
    config.trace = Some(SAMPLE_TRACE.to_string());
    to_json(&config)
}

/// Analytic breakdown and simulated iteration time of one configuration.
pub fn predict_report(config_json: &str) -> Result<String, String> {
    let run = prepare(config_json)?;
    let iterations = run.config.iterations.max(2);
    let mut report =
        pipeline::predict(&run.workload, &run.cluster, &run.build.profile, run.strategy, iterations, None).map_err(message)?;
    report.io_source = Some(run.build.io_source);
    Ok(to_json(&report))
}

/// Gantt chart of the simulated schedule.
pub fn gantt_chart(config_json: &str) -> Result<String, String> {
    let run = prepare(config_json)?;
    let result = pipeline::simulate_strategy(
        &run.workload,
        &run.cluster,
        &run.build.profile,
        run.strategy,
        run.config.iterations.max(1),
    )
    .map_err(message)?;
    Ok(gantt::gantt_svg(&result))
}

/// Weak-scaling speedup rows for the configured GPU counts.
pub fn speedup_rows(config_json: &str) -> Result<String, String> {
    let run = prepare(config_json)?;
    let mut counts = if run.config.counts.is_empty() { vec![1, run.cluster.total_gpus] } else { run.config.counts.clone() };
    counts.dedup();
    let rows = pipeline::speedup_curve(
        &run.workload,
        &run.cluster,
        &run.build.profile,
        run.strategy,
        &counts,
        run.config.iterations.max(2),
    )
    .map_err(message)?;
    Ok(to_json(&rows))
}

#[wasm_bindgen(js_name = sampleConfig)]
pub fn sample_config_js() -> String {
    sample_config()
}

#[wasm_bindgen]
pub fn predict(config_json: &str) -> Result<String, JsError> {
    predict_report(config_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gantt(config_json: &str) -> Result<String, JsError> {
    gantt_chart(config_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn speedup(config_json: &str) -> Result<String, JsError> {
    speedup_rows(config_json).map_err(|e| JsError::new(&e))
}
