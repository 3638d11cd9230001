//! Domain types shared by every stage of the pipeline: cluster and workload
//! descriptions, layer-wise timing profiles, the task DAG and the scheduled
//! timeline it produces.
//!
//! All times are microseconds stored as `f64`; all sizes are bytes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Microseconds.
pub type Micros = f64;

const MICROS_PER_SECOND: f64 = 1e6;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("invalid dag: {0}")]
    InvalidDag(String),
    #[error("cycle detected involving task {0}")]
    CycleDetected(usize),
    #[error("timeline violation: {0}")]
    TimelineViolation(String),
}

fn non_negative(value: f64) -> bool {
    value.is_finite() && value >= 0.0
}

fn positive(value: f64) -> bool {
    value.is_finite() && value > 0.0
}

/// Machines, GPUs and the bandwidth of every channel a task can occupy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub machines: usize,
    pub gpus_per_machine: usize,
    /// Derived; may be omitted in input files.
    #[serde(default)]
    pub total_gpus: usize,
    pub disk_bandwidth: f64,
    pub h2d_bandwidth: f64,
    pub network_bandwidth: f64,
    pub intra_bandwidth: f64,
}

impl ClusterSpec {
    pub fn new(
        machines: usize,
        gpus_per_machine: usize,
        disk_bandwidth: f64,
        h2d_bandwidth: f64,
        network_bandwidth: f64,
        intra_bandwidth: f64,
    ) -> Result<Self, ModelError> {
        ClusterSpec {
            machines,
            gpus_per_machine,
            total_gpus: 0,
            disk_bandwidth,
            h2d_bandwidth,
            network_bandwidth,
            intra_bandwidth,
        }
        .validate()
    }

    /// Checks the invariants and fills in `total_gpus`.
    pub fn validate(mut self) -> Result<Self, ModelError> {
        if self.machines == 0 {
            return Err(ModelError::InvalidSpec("machines must be at least 1".into()));
        }
        if self.gpus_per_machine == 0 {
            return Err(ModelError::InvalidSpec("gpus_per_machine must be at least 1".into()));
        }
        let bandwidths = [
            ("disk_bandwidth", self.disk_bandwidth),
            ("h2d_bandwidth", self.h2d_bandwidth),
            ("network_bandwidth", self.network_bandwidth),
            ("intra_bandwidth", self.intra_bandwidth),
        ];
        for (name, value) in bandwidths {
            if !positive(value) {
                return Err(ModelError::InvalidSpec(format!("{name} must be positive, got {value}")));
            }
        }
        let total = self
            .machines
            .checked_mul(self.gpus_per_machine)
            .ok_or_else(|| ModelError::InvalidSpec("total GPU count overflows".into()))?;
        if self.total_gpus != 0 && self.total_gpus != total {
            return Err(ModelError::InvalidSpec(format!(
                "total_gpus = {} disagrees with machines x gpus_per_machine = {total}",
                self.total_gpus
            )));
        }
        self.total_gpus = total;
        Ok(self)
    }

    /// Re-lays the cluster out for `gpus` total GPUs, keeping the bandwidths.
    ///
    /// Counts up to `gpus_per_machine` fit on one machine; larger counts must
    /// fill whole machines.
    pub fn with_total_gpus(&self, gpus: usize) -> Result<Self, ModelError> {
        if gpus == 0 {
            return Err(ModelError::InvalidSpec("GPU count must be at least 1".into()));
        }
        let (machines, per_machine) = if gpus <= self.gpus_per_machine {
            (1, gpus)
        } else if gpus.is_multiple_of(self.gpus_per_machine) {
            (gpus / self.gpus_per_machine, self.gpus_per_machine)
        } else {
            return Err(ModelError::InvalidSpec(format!(
                "{gpus} GPUs do not fill whole machines of {} GPUs",
                self.gpus_per_machine
            )));
        };
        ClusterSpec { machines, gpus_per_machine: per_machine, total_gpus: 0, ..self.clone() }.validate()
    }

    pub fn machine_of(&self, gpu: usize) -> usize {
        gpu / self.gpus_per_machine
    }

    /// Link the gradient all-reduce is bottlenecked on.
    pub fn allreduce_bandwidth(&self) -> f64 {
        if self.machines > 1 {
            self.network_bandwidth
        } else {
            self.intra_bandwidth
        }
    }
}

/// Per-GPU training workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub layers: usize,
    pub batch_per_gpu: usize,
    pub bytes_per_sample: u64,
    /// Derived; may be omitted in input files.
    #[serde(default)]
    pub input_bytes_per_gpu: u64,
    #[serde(default)]
    pub update_time: Micros,
}

impl WorkloadSpec {
    pub fn new(layers: usize, batch_per_gpu: usize, bytes_per_sample: u64) -> Result<Self, ModelError> {
        WorkloadSpec { layers, batch_per_gpu, bytes_per_sample, input_bytes_per_gpu: 0, update_time: 0.0 }
            .validate()
    }

    pub fn validate(mut self) -> Result<Self, ModelError> {
        if self.layers == 0 {
            return Err(ModelError::InvalidSpec("layers must be at least 1".into()));
        }
        if self.batch_per_gpu == 0 {
            return Err(ModelError::InvalidSpec("batch_per_gpu must be at least 1".into()));
        }
        if !non_negative(self.update_time) {
            return Err(ModelError::InvalidSpec(format!("update_time must be >= 0, got {}", self.update_time)));
        }
        let bytes = (self.batch_per_gpu as u64)
            .checked_mul(self.bytes_per_sample)
            .ok_or_else(|| ModelError::InvalidSpec("input size overflows".into()))?;
        if self.input_bytes_per_gpu != 0 && self.input_bytes_per_gpu != bytes {
            return Err(ModelError::InvalidSpec(format!(
                "input_bytes_per_gpu = {} disagrees with batch_per_gpu x bytes_per_sample = {bytes}",
                self.input_bytes_per_gpu
            )));
        }
        self.input_bytes_per_gpu = bytes;
        Ok(self)
    }

    /// Seconds to move one per-GPU mini-batch over a `bandwidth` bytes/s
    /// channel, in microseconds.
    pub fn transfer_time(&self, bandwidth: f64) -> Micros {
        self.input_bytes_per_gpu as f64 / bandwidth * MICROS_PER_SECOND
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub layer_id: usize,
    pub name: String,
    pub forward_time: Micros,
    pub backward_time: Micros,
    pub comm_time: Micros,
    pub gradient_bytes: u64,
}

impl LayerProfile {
    pub fn new(layer_id: usize, name: impl Into<String>, forward: Micros, backward: Micros, comm: Micros, bytes: u64) -> Self {
        LayerProfile {
            layer_id,
            name: name.into(),
            forward_time: forward,
            backward_time: backward,
            comm_time: comm,
            gradient_bytes: bytes,
        }
    }

    /// Layers without parameters exchange no gradients and get no all-reduce.
    pub fn learnable(&self) -> bool {
        self.gradient_bytes > 0
    }
}

/// Averaged timing of one training iteration on one GPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationProfile {
    pub io_time: Micros,
    pub h2d_time: Micros,
    pub layer_profiles: Vec<LayerProfile>,
    #[serde(default)]
    pub update_time: Micros,
}

impl IterationProfile {
    pub fn new(io_time: Micros, h2d_time: Micros, layer_profiles: Vec<LayerProfile>, update_time: Micros) -> Self {
        IterationProfile { io_time, h2d_time, layer_profiles, update_time }
    }

    pub fn validate(self) -> Result<Self, ModelError> {
        if self.layer_profiles.is_empty() {
            return Err(ModelError::InvalidProfile("profile has no layers".into()));
        }
        for (name, value) in [("io_time", self.io_time), ("h2d_time", self.h2d_time), ("update_time", self.update_time)] {
            if !non_negative(value) {
                return Err(ModelError::InvalidProfile(format!("{name} must be >= 0, got {value}")));
            }
        }
        for (index, layer) in self.layer_profiles.iter().enumerate() {
            if layer.layer_id != index + 1 {
                return Err(ModelError::InvalidProfile(format!(
                    "layer ids must be contiguous from 1: expected {}, found {}",
                    index + 1,
                    layer.layer_id
                )));
            }
            for (field, value) in [
                ("forward_time", layer.forward_time),
                ("backward_time", layer.backward_time),
                ("comm_time", layer.comm_time),
            ] {
                if !non_negative(value) {
                    return Err(ModelError::InvalidProfile(format!(
                        "layer {} ({}) {field} must be >= 0, got {value}",
                        layer.layer_id, layer.name
                    )));
                }
            }
            if layer.comm_time > 0.0 && layer.gradient_bytes == 0 {
                return Err(ModelError::InvalidProfile(format!(
                    "layer {} ({}) has comm_time {} but no gradient bytes",
                    layer.layer_id, layer.name, layer.comm_time
                )));
            }
        }
        Ok(self)
    }

    pub fn layers(&self) -> usize {
        self.layer_profiles.len()
    }

    pub fn layer(&self, layer_id: usize) -> &LayerProfile {
        &self.layer_profiles[layer_id - 1]
    }

    pub fn learnable_layers(&self) -> usize {
        self.layer_profiles.iter().filter(|l| l.learnable()).count()
    }

    pub fn forward_total(&self) -> Micros {
        self.layer_profiles.iter().map(|l| l.forward_time).sum()
    }

    pub fn backward_total(&self) -> Micros {
        self.layer_profiles.iter().map(|l| l.backward_time).sum()
    }

    pub fn comm_total(&self) -> Micros {
        self.layer_profiles.iter().map(|l| l.comm_time).sum()
    }

    pub fn gradient_bytes_total(&self) -> u64 {
        self.layer_profiles.iter().map(|l| l.gradient_bytes).sum()
    }

    /// Same profile with every gradient exchange removed (single-GPU run).
    pub fn without_comm(&self) -> Self {
        let mut profile = self.clone();
        for layer in &mut profile.layer_profiles {
            layer.comm_time = 0.0;
        }
        profile
    }
}

/// How the iteration pipeline overlaps I/O and gradient communication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapMode {
    Naive,
    IoOverlap,
    WfbpOverlap,
    IoAndWfbpOverlap,
}

impl OverlapMode {
    pub fn overlaps_io(self) -> bool {
        matches!(self, OverlapMode::IoOverlap | OverlapMode::IoAndWfbpOverlap)
    }
}

/// When a layer's gradient all-reduce may start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommTrigger {
    /// As soon as that layer's backward pass finishes on every GPU
    /// (Caffe-MPI, MXNet, TensorFlow).
    AfterLayerBackward,
    /// Only after the whole backward pass finishes on every GPU (CNTK).
    AfterAllBackward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub mode: OverlapMode,
    pub comm_trigger: CommTrigger,
}

impl Strategy {
    pub fn new(mode: OverlapMode, comm_trigger: CommTrigger) -> Result<Self, ModelError> {
        if mode == OverlapMode::Naive && comm_trigger != CommTrigger::AfterAllBackward {
            return Err(ModelError::InvalidStrategy(
                "the naive strategy aggregates gradients only after the whole backward pass".into(),
            ));
        }
        Ok(Strategy { mode, comm_trigger })
    }

    /// The mode with its usual trigger: per-layer for the WFBP modes,
    /// after-all otherwise.
    pub fn from_mode(mode: OverlapMode) -> Self {
        let comm_trigger = match mode {
            OverlapMode::WfbpOverlap | OverlapMode::IoAndWfbpOverlap => CommTrigger::AfterLayerBackward,
            OverlapMode::Naive | OverlapMode::IoOverlap => CommTrigger::AfterAllBackward,
        };
        Strategy { mode, comm_trigger }
    }

    pub fn naive() -> Self {
        Self::from_mode(OverlapMode::Naive)
    }

    pub fn io_overlap() -> Self {
        Self::from_mode(OverlapMode::IoOverlap)
    }

    pub fn wfbp() -> Self {
        Self::from_mode(OverlapMode::WfbpOverlap)
    }

    pub fn io_and_wfbp() -> Self {
        Self::from_mode(OverlapMode::IoAndWfbpOverlap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Io,
    H2d,
    Forward,
    Backward,
    AllReduce,
    Update,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Io => "io",
            TaskKind::H2d => "h2d",
            TaskKind::Forward => "forward",
            TaskKind::Backward => "backward",
            TaskKind::AllReduce => "allreduce",
            TaskKind::Update => "update",
        }
    }

    /// Computing tasks occupy GPUs; the rest occupy a disk or an interconnect.
    pub fn is_computing(self) -> bool {
        matches!(self, TaskKind::Forward | TaskKind::Backward | TaskKind::Update)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskNode {
    pub id: usize,
    pub kind: TaskKind,
    pub layer: Option<usize>,
    pub gpu: Option<usize>,
    pub iteration: usize,
    pub duration: Micros,
}

impl TaskNode {
    fn check(&self) -> Result<(), String> {
        let shape_ok = match self.kind {
            TaskKind::Io | TaskKind::H2d => self.layer.is_none() && self.gpu.is_some(),
            TaskKind::Forward | TaskKind::Backward => self.layer.is_some() && self.gpu.is_some(),
            TaskKind::AllReduce => self.layer.is_some() && self.gpu.is_none(),
            TaskKind::Update => self.layer.is_none() && self.gpu.is_none(),
        };
        if !shape_ok {
            return Err(format!("task {} ({}) has wrong layer/gpu fields", self.id, self.kind));
        }
        if !non_negative(self.duration) {
            return Err(format!("task {} has invalid duration {}", self.id, self.duration));
        }
        Ok(())
    }
}

/// Precedence graph over computing and communication tasks. Node ids equal
/// their index in `nodes`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskDag {
    pub nodes: Vec<TaskNode>,
    pub edges: Vec<(usize, usize)>,
}

impl TaskDag {
    pub fn new(nodes: Vec<TaskNode>, edges: Vec<(usize, usize)>) -> Result<Self, ModelError> {
        let dag = TaskDag { nodes, edges };
        dag.validate()?;
        Ok(dag)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (index, node) in self.nodes.iter().enumerate() {
            if node.id != index {
                return Err(ModelError::InvalidDag(format!("node at index {index} has id {}", node.id)));
            }
            node.check().map_err(ModelError::InvalidDag)?;
        }
        let mut seen = HashSet::with_capacity(self.edges.len());
        for &(from, to) in &self.edges {
            if from >= self.nodes.len() || to >= self.nodes.len() {
                return Err(ModelError::InvalidDag(format!("edge ({from}, {to}) references a missing node")));
            }
            if !seen.insert((from, to)) {
                return Err(ModelError::InvalidDag(format!("duplicate edge ({from}, {to})")));
            }
        }
        crate::dag::topological_order(self)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.nodes.len()];
        for &(from, to) in &self.edges {
            preds[to].push(from);
        }
        for list in &mut preds {
            list.sort_unstable();
        }
        preds
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succs = vec![Vec::new(); self.nodes.len()];
        for &(from, to) in &self.edges {
            succs[from].push(to);
        }
        for list in &mut succs {
            list.sort_unstable();
        }
        succs
    }

    /// Number of chained iterations (trailing prefetch nodes excluded).
    pub fn iterations(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind == TaskKind::Update)
            .map(|n| n.iteration + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn find(&self, kind: TaskKind, iteration: usize, layer: Option<usize>, gpu: Option<usize>) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.kind == kind && n.iteration == iteration && n.layer == layer && n.gpu == gpu)
    }
}

/// A hardware unit a task occupies while it runs. Serialized by its display
/// name (`gpu0`, `disk0`, `h2d0`, `comm0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ResourceId {
    Compute(usize),
    Disk(usize),
    H2d(usize),
    Comm(usize),
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourceId::Compute(i) => write!(f, "gpu{i}"),
            ResourceId::Disk(i) => write!(f, "disk{i}"),
            ResourceId::H2d(i) => write!(f, "h2d{i}"),
            ResourceId::Comm(i) => write!(f, "comm{i}"),
        }
    }
}

impl From<ResourceId> for String {
    fn from(id: ResourceId) -> String {
        id.to_string()
    }
}

impl std::str::FromStr for ResourceId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let split = s.find(|c: char| c.is_ascii_digit()).ok_or_else(|| format!("bad resource name {s:?}"))?;
        let (prefix, index) = s.split_at(split);
        let index: usize = index.parse().map_err(|_| format!("bad resource name {s:?}"))?;
        match prefix {
            "gpu" => Ok(ResourceId::Compute(index)),
            "disk" => Ok(ResourceId::Disk(index)),
            "h2d" => Ok(ResourceId::H2d(index)),
            "comm" => Ok(ResourceId::Comm(index)),
            _ => Err(format!("bad resource name {s:?}")),
        }
    }
}

impl TryFrom<String> for ResourceId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub task: usize,
    pub kind: TaskKind,
    pub layer: Option<usize>,
    pub gpu: Option<usize>,
    pub iteration: usize,
    pub start: Micros,
    pub end: Micros,
    pub resources: Vec<ResourceId>,
}

/// Gradient communication of one layer in one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommWindow {
    pub iteration: usize,
    pub layer: usize,
    pub start: Micros,
    pub end: Micros,
}

/// Backward pass of one layer in one iteration, spanning every GPU: `start`
/// is the earliest start, `end` the latest end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackwardWindow {
    pub iteration: usize,
    pub layer: usize,
    pub start: Micros,
    pub end: Micros,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timeline {
    /// Indexed by task id.
    pub entries: Vec<TimelineEntry>,
    pub makespan: Micros,
    pub comm_windows: Vec<CommWindow>,
    pub backward_windows: Vec<BackwardWindow>,
    /// Per-iteration communication time not hidden under backward work.
    pub nonoverlapped_comm: Vec<Micros>,
}

impl Timeline {
    /// Derives makespan and the communication/backward windows from raw entries.
    pub fn from_entries(entries: Vec<TimelineEntry>) -> Self {
        let makespan = entries.iter().map(|e| e.end).fold(0.0, f64::max);
        let mut comm_windows = Vec::new();
        let mut backward: BTreeMap<(usize, usize), (Micros, Micros)> = BTreeMap::new();
        for entry in &entries {
            match entry.kind {
                TaskKind::AllReduce => comm_windows.push(CommWindow {
                    iteration: entry.iteration,
                    layer: entry.layer.unwrap_or(0),
                    start: entry.start,
                    end: entry.end,
                }),
                TaskKind::Backward => {
                    let key = (entry.iteration, entry.layer.unwrap_or(0));
                    let window = backward.entry(key).or_insert((entry.start, entry.end));
                    window.0 = window.0.min(entry.start);
                    window.1 = window.1.max(entry.end);
                }
                _ => {}
            }
        }
        comm_windows.sort_by(|a, b| a.iteration.cmp(&b.iteration).then(b.layer.cmp(&a.layer)));
        let mut backward_windows = backward
            .into_iter()
            .map(|((iteration, layer), (start, end))| BackwardWindow { iteration, layer, start, end })
            .collect::<Vec<_>>();
        backward_windows.sort_by(|a, b| a.iteration.cmp(&b.iteration).then(b.layer.cmp(&a.layer)));
        Timeline { entries, makespan, comm_windows, backward_windows, nonoverlapped_comm: Vec::new() }
    }

    pub fn comm_window(&self, iteration: usize, layer: usize) -> Option<&CommWindow> {
        self.comm_windows.iter().find(|w| w.iteration == iteration && w.layer == layer)
    }

    pub fn backward_window(&self, iteration: usize, layer: usize) -> Option<&BackwardWindow> {
        self.backward_windows.iter().find(|w| w.iteration == iteration && w.layer == layer)
    }

    /// Verifies that this timeline is a feasible schedule of `dag`.
    pub fn check(&self, dag: &TaskDag) -> Result<(), ModelError> {
        let violation = |msg: String| Err(ModelError::TimelineViolation(msg));
        if self.entries.len() != dag.nodes.len() {
            return violation(format!("{} entries for {} tasks", self.entries.len(), dag.nodes.len()));
        }
        for (id, entry) in self.entries.iter().enumerate() {
            let node = &dag.nodes[id];
            if entry.task != id || entry.kind != node.kind || entry.layer != node.layer || entry.gpu != node.gpu {
                return violation(format!("entry {id} does not describe task {id}"));
            }
            if !entry.start.is_finite() || entry.start < 0.0 {
                return violation(format!("task {id} starts at {}", entry.start));
            }
            if entry.end != entry.start + node.duration {
                return violation(format!(
                    "task {id} runs [{}, {}] but lasts {}",
                    entry.start, entry.end, node.duration
                ));
            }
            if entry.resources.is_empty() {
                return violation(format!("task {id} has no resource"));
            }
        }
        for &(from, to) in &dag.edges {
            if self.entries[to].start < self.entries[from].end {
                return violation(format!(
                    "task {to} starts at {} before predecessor {from} ends at {}",
                    self.entries[to].start, self.entries[from].end
                ));
            }
        }
        let mut by_resource: BTreeMap<ResourceId, Vec<(Micros, Micros, usize)>> = BTreeMap::new();
        for entry in &self.entries {
            for &resource in &entry.resources {
                by_resource.entry(resource).or_default().push((entry.start, entry.end, entry.task));
            }
        }
        for (resource, mut spans) in by_resource {
            // Zero-length tasks never occupy the resource.
            spans.retain(|span| span.1 > span.0);
            spans.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let mut busy_until: Option<(Micros, usize)> = None;
            for (start, end, task) in spans {
                if let Some((until, other)) = busy_until {
                    if until > start {
                        return violation(format!("tasks {other} and {task} overlap on {resource}"));
                    }
                }
                busy_until = Some((end, task));
            }
        }
        for window in &self.comm_windows {
            if window.end < window.start {
                return violation(format!("layer {} communication ends before it starts", window.layer));
            }
            let id = dag
                .find(TaskKind::AllReduce, window.iteration, Some(window.layer), None)
                .ok_or_else(|| ModelError::TimelineViolation(format!("no all-reduce for layer {}", window.layer)))?;
            let duration = dag.nodes[id].duration;
            if window.end != window.start + duration {
                return violation(format!("layer {} communication window disagrees with its task", window.layer));
            }
            if let Some(backward) = self.backward_window(window.iteration, window.layer) {
                let needs = dag
                    .nodes
                    .iter()
                    .filter(|n| {
                        n.kind == TaskKind::Backward && n.iteration == window.iteration && n.layer == Some(window.layer)
                    })
                    .map(|n| n.duration)
                    .fold(0.0, f64::max);
                if window.start < backward.start + needs {
                    return violation(format!(
                        "layer {} communication starts at {} before its gradients exist at {}",
                        window.layer,
                        window.start,
                        backward.start + needs
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Weak-scaling speedup of `scaled_gpus` GPUs over `baseline_gpus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub baseline_gpus: usize,
    pub scaled_gpus: usize,
    pub baseline_iter_time: Micros,
    pub scaled_iter_time: Micros,
    pub io_time_baseline: Micros,
    pub io_time_scaled: Micros,
    pub speedup: f64,
}

impl SpeedupReport {
    pub fn efficiency(&self) -> f64 {
        self.speedup / self.scaled_gpus as f64 * self.baseline_gpus as f64
    }
}
